#include "scope/pipeline/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "scope/core/error.hpp"
#include "scope/core/binary_io.hpp"

namespace scope::pipeline {

namespace {

struct Entry {
  std::function<void(ScopeConfig&, std::string_view)> set;
  std::function<std::string(const ScopeConfig&)> get;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("config key " + std::string(key) + ": cannot parse \"" + std::string(value) + "\" as " +
                    std::string(expected));
}

template <typename T>
T parse_number(std::string_view key, std::string_view text, std::string_view expected) {
  const std::string v = trim(text);
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, text, expected);
  return out;
}

bool parse_bool(std::string_view key, std::string_view text) {
  const std::string v = trim(text);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, text, "a boolean");
}

std::string fmt_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename T>
std::vector<T> parse_list(std::string_view key, std::string_view text, std::string_view expected) {
  std::vector<T> out;
  const std::string v = trim(text);
  if (v.empty()) return out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto part = std::string_view(v).substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    out.push_back(parse_number<T>(key, part, expected));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>)
      s += fmt_double(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s;
}

using Registry = std::map<std::string, Entry, std::less<>>;

template <typename Access>
Entry size_entry(Access a) {
  return {[a](ScopeConfig& c, std::string_view v) { a(c) = parse_number<std::size_t>("", v, "a non-negative integer"); },
          [a](const ScopeConfig& c) { return std::to_string(a(const_cast<ScopeConfig&>(c))); }};
}
template <typename Access>
Entry u64_entry(Access a) {
  return {[a](ScopeConfig& c, std::string_view v) { a(c) = parse_number<std::uint64_t>("", v, "an unsigned integer"); },
          [a](const ScopeConfig& c) { return std::to_string(a(const_cast<ScopeConfig&>(c))); }};
}
template <typename Access>
Entry double_entry(Access a) {
  return {[a](ScopeConfig& c, std::string_view v) { a(c) = parse_number<double>("", v, "a number"); },
          [a](const ScopeConfig& c) { return fmt_double(a(const_cast<ScopeConfig&>(c))); }};
}
template <typename Access>
Entry bool_entry(Access a) {
  return {[a](ScopeConfig& c, std::string_view v) { a(c) = parse_bool("", v); },
          [a](const ScopeConfig& c) { return std::string(a(const_cast<ScopeConfig&>(c)) ? "true" : "false"); }};
}
template <typename Access>
Entry string_entry(Access a) {
  return {[a](ScopeConfig& c, std::string_view v) { a(c) = trim(v); },
          [a](const ScopeConfig& c) { return a(const_cast<ScopeConfig&>(c)); }};
}
template <typename Access>
Entry optimizer_entry(Access a) {
  return {[a](ScopeConfig& c, std::string_view v) { a(c) = parse_optimizer_kind(trim(v)); },
          [a](const ScopeConfig& c) { return std::string(optimizer_name(a(const_cast<ScopeConfig&>(c)))); }};
}

#define SCOPE_FIELD(expr) [](ScopeConfig& c) -> auto& { return c.expr; }

const Registry& registry() {
  static const Registry r = [] {
    Registry m;
    m["data.cohort_path"] = string_entry(SCOPE_FIELD(cohort_path));
    m["data.num_classes"] = size_entry(SCOPE_FIELD(data.num_classes));
    m["data.modes_per_class"] = size_entry(SCOPE_FIELD(data.modes_per_class));
    m["data.channels"] = size_entry(SCOPE_FIELD(data.channels));
    m["data.time_points"] = size_entry(SCOPE_FIELD(data.time_points));
    m["data.labeled_subjects"] = size_entry(SCOPE_FIELD(data.labeled_subjects));
    m["data.unlabeled_subjects"] = size_entry(SCOPE_FIELD(data.unlabeled_subjects));
    m["data.validation_subjects"] = size_entry(SCOPE_FIELD(data.validation_subjects));
    m["data.test_subjects"] = size_entry(SCOPE_FIELD(data.test_subjects));
    m["data.samples_per_subject"] = size_entry(SCOPE_FIELD(data.samples_per_subject));
    m["data.class_separation"] = double_entry(SCOPE_FIELD(data.class_separation));
    m["data.mode_spread"] = double_entry(SCOPE_FIELD(data.mode_spread));
    m["data.subject_shift"] = double_entry(SCOPE_FIELD(data.subject_shift));
    m["data.noise"] = double_entry(SCOPE_FIELD(data.noise));
    m["data.class_weights"] = {
        [](ScopeConfig& c, std::string_view v) {
          c.data.class_weights = parse_list<double>("", v, "a list of numbers");
        },
        [](const ScopeConfig& c) { return join(c.data.class_weights); }};
    m["data.seed"] = u64_entry(SCOPE_FIELD(data.seed));

    m["tpn.mode"] = {[](ScopeConfig& c, std::string_view v) { c.tpn_arch.mode = tpn::parse_encoder_mode(trim(v)); },
                     [](const ScopeConfig& c) { return std::string(tpn::encoder_mode_name(c.tpn_arch.mode)); }};
    m["tpn.temporal_filters"] = size_entry(SCOPE_FIELD(tpn_arch.temporal_filters));
    m["tpn.depth_multiplier"] = size_entry(SCOPE_FIELD(tpn_arch.depth_multiplier));
    m["tpn.separable_filters"] = size_entry(SCOPE_FIELD(tpn_arch.separable_filters));
    m["tpn.temporal_kernel"] = size_entry(SCOPE_FIELD(tpn_arch.temporal_kernel));
    m["tpn.separable_kernel"] = size_entry(SCOPE_FIELD(tpn_arch.separable_kernel));
    m["tpn.pool1"] = size_entry(SCOPE_FIELD(tpn_arch.pool1));
    m["tpn.pool2"] = size_entry(SCOPE_FIELD(tpn_arch.pool2));
    m["tpn.mlp_hidden"] = size_entry(SCOPE_FIELD(tpn_arch.mlp_hidden));
    m["tpn.epochs"] = size_entry(SCOPE_FIELD(tpn.epochs));
    m["tpn.batch_size"] = size_entry(SCOPE_FIELD(tpn.batch_size));
    m["tpn.optimizer"] = optimizer_entry(SCOPE_FIELD(tpn.optimizer.kind));
    m["tpn.learning_rate"] = double_entry(SCOPE_FIELD(tpn.optimizer.learning_rate));
    m["tpn.weight_decay"] = double_entry(SCOPE_FIELD(tpn.optimizer.weight_decay));
    m["tpn.etf_weight"] = double_entry(SCOPE_FIELD(tpn.etf_weight));
    m["tpn.label_smoothing"] = double_entry(SCOPE_FIELD(tpn.label_smoothing));
    m["tpn.etf_for_binary"] = bool_entry(SCOPE_FIELD(tpn.etf_for_binary));

    m["proto.per_class"] = size_entry(SCOPE_FIELD(prototypes_per_class));
    m["proto.epsilon"] = double_entry(SCOPE_FIELD(proto.epsilon));
    m["proto.tau"] = double_entry(SCOPE_FIELD(proto.tau));
    m["proto.sinkhorn_iters"] = size_entry(SCOPE_FIELD(proto.sinkhorn_iters));
    m["proto.uniform_mix"] = double_entry(SCOPE_FIELD(proto.uniform_mix));
    m["proto.epochs"] = size_entry(SCOPE_FIELD(proto.epochs));
    m["proto.batch_size"] = size_entry(SCOPE_FIELD(proto.batch_size));
    m["proto.learning_rate"] = double_entry(SCOPE_FIELD(proto.optimizer.learning_rate));
    m["proto.weight_decay"] = double_entry(SCOPE_FIELD(proto.optimizer.weight_decay));
    m["proto.kmeans_restarts"] = size_entry(SCOPE_FIELD(proto_init.restarts));
    m["proto.kmeans_max_per_class"] = size_entry(SCOPE_FIELD(proto_init.max_per_class));
    m["proto.jitter"] = double_entry(SCOPE_FIELD(proto_init.jitter));

    m["fusion.rho"] = double_entry(SCOPE_FIELD(fusion.rho));
    m["fusion.proto_temperature"] = double_entry(SCOPE_FIELD(fusion.proto_temperature));

    m["backbone.patch"] = size_entry(SCOPE_FIELD(backbone.patch));
    m["backbone.width"] = size_entry(SCOPE_FIELD(backbone.width));
    m["backbone.hidden"] = size_entry(SCOPE_FIELD(backbone.hidden));
    m["backbone.depth"] = size_entry(SCOPE_FIELD(backbone.depth));
    m["backbone.bias_scale"] = double_entry(SCOPE_FIELD(backbone.bias_scale));
    m["backbone.residual_scale"] = double_entry(SCOPE_FIELD(backbone.residual_scale));
    m["backbone.seed"] = u64_entry(SCOPE_FIELD(backbone.seed));

    m["adapter.depth"] = size_entry(SCOPE_FIELD(adapter.depth));
    m["adapter.lambda"] = double_entry(SCOPE_FIELD(adapter.lambda));
    m["adapter.lambda_proto"] = double_entry(SCOPE_FIELD(adapter.lambda_proto));

    m["train.epochs"] = size_entry(SCOPE_FIELD(train.epochs));
    m["train.warmup_epochs"] = size_entry(SCOPE_FIELD(train.warmup_epochs));
    m["train.batch_size"] = size_entry(SCOPE_FIELD(train.batch_size));
    m["train.pseudo_ratio"] = double_entry(SCOPE_FIELD(train.pseudo_ratio));
    m["train.optimizer"] = optimizer_entry(SCOPE_FIELD(train.optimizer.kind));
    m["train.learning_rate"] = double_entry(SCOPE_FIELD(train.optimizer.learning_rate));
    m["train.weight_decay"] = double_entry(SCOPE_FIELD(train.optimizer.weight_decay));
    m["train.min_learning_rate"] = double_entry(SCOPE_FIELD(train.min_learning_rate));
    m["train.strategy"] = {[](ScopeConfig& c, std::string_view v) { c.train.strategy = parse_strategy(trim(v)); },
                           [](const ScopeConfig& c) { return std::string(strategy_name(c.train.strategy)); }};

    m["ablation.etf_off"] = bool_entry(SCOPE_FIELD(ablation.etf_off));
    m["ablation.sinkhorn_off"] = bool_entry(SCOPE_FIELD(ablation.sinkhorn_off));
    m["ablation.confidence_weights_off"] = bool_entry(SCOPE_FIELD(ablation.confidence_weights_off));
    m["ablation.prototype_conditioning_off"] = bool_entry(SCOPE_FIELD(ablation.prototype_conditioning_off));
    m["ablation.adapter_off"] = bool_entry(SCOPE_FIELD(ablation.adapter_off));

    m["run.seeds"] = {[](ScopeConfig& c, std::string_view v) {
                        c.seeds = parse_list<std::uint64_t>("", v, "a list of unsigned integers");
                      },
                      [](const ScopeConfig& c) { return join(c.seeds); }};
    m["run.output_dir"] = string_entry(SCOPE_FIELD(output_dir));
    return m;
  }();
  return r;
}

#undef SCOPE_FIELD

const Entry& lookup(std::string_view key) {
  const auto& r = registry();
  const auto it = r.find(key);
  if (it == r.end()) throw ConfigError("unknown config key \"" + std::string(key) + "\"");
  return it->second;
}

}  // namespace

std::string_view strategy_name(Strategy s) noexcept {
  switch (s) {
    case Strategy::interleaved: return "interleaved";
    case Strategy::sequential: return "sequential";
    case Strategy::two_stage: return "two-stage";
    case Strategy::no_warmup: return "no-warmup";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  for (auto s : {Strategy::interleaved, Strategy::sequential, Strategy::two_stage, Strategy::no_warmup})
    if (strategy_name(s) == name) return s;
  throw ConfigError("unknown training strategy \"" + std::string(name) +
                    "\" (expected interleaved|sequential|two-stage|no-warmup)");
}

void ScopeConfig::validate() const {
  if (cohort_path.empty()) data.validate();
  tpn.validate();
  proto.validate();
  backbone.validate();
  adapter.validate();
  if (prototypes_per_class == 0) throw ConfigError("proto.per_class must be >= 1");
  if (proto_init.restarts == 0) throw ConfigError("proto.kmeans_restarts must be >= 1");
  if (!(fusion.proto_temperature > 0.0)) throw ConfigError("fusion.proto_temperature must be positive");
  if (!(fusion.rho >= 0.0 && fusion.rho < 1.0)) throw ConfigError("fusion.rho must lie in [0, 1)");
  if (adapter.depth > backbone.depth)
    throw ConfigError("adapter.depth (" + std::to_string(adapter.depth) + ") exceeds backbone.depth (" +
                      std::to_string(backbone.depth) + ")");
  if (train.epochs == 0) throw ConfigError("train.epochs must be >= 1");
  if (train.warmup_epochs > train.epochs) throw ConfigError("train.warmup_epochs must not exceed train.epochs");
  if (!(train.pseudo_ratio > 0.0)) throw ConfigError("train.pseudo_ratio must be positive");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(train.optimizer.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(train.min_learning_rate >= 0.0 && train.min_learning_rate <= train.optimizer.learning_rate))
    throw ConfigError("train.min_learning_rate must lie in [0, train.learning_rate]");
  if (seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, e] : registry()) keys.push_back(k);
  return keys;
}

void set_config_value(ScopeConfig& cfg, std::string_view key, std::string_view value) {
  const Entry& e = lookup(key);
  try {
    e.set(cfg, value);
  } catch (const ConfigError& err) {
    // Parsers do not know the key; put it in front.
    const std::string what = err.what();
    if (what.rfind("config key :", 0) == 0)
      throw ConfigError("config key " + std::string(key) + what.substr(11));
    throw ConfigError("config key " + std::string(key) + ": " + what);
  }
}

std::string get_config_value(const ScopeConfig& cfg, std::string_view key) { return lookup(key).get(cfg); }

void apply_override(ScopeConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("override \"" + std::string(assignment) + "\" is not of the form section.key=value");
  set_config_value(cfg, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

ScopeConfig parse_config(const std::string& ini_text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  ScopeConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key \"" + section + "\" appears outside any section");
    for (const auto& [key, value] : body) set_config_value(cfg, section + "." + key, value.data());
  }
  return cfg;
}

ScopeConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw ConfigError("config file not found: " + path.string() + " (" + config_schema_hint() + ")");
  return parse_config(io::read_text(path));
}

std::string config_to_ini(const ScopeConfig& cfg) {
  std::ostringstream os;
  std::string current;
  for (const auto& [key, e] : registry()) {
    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    if (section != current) {
      if (!current.empty()) os << '\n';
      os << '[' << section << "]\n";
      current = section;
    }
    os << key.substr(dot + 1) << " = " << e.get(cfg) << '\n';
  }
  return os.str();
}

std::string config_to_json(const ScopeConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [key, e] : registry()) {
    const auto dot = key.find('.');
    j[key.substr(0, dot)][key.substr(dot + 1)] = e.get(cfg);
  }
  return j.dump(2);
}

std::string config_schema_hint() {
  return "INI file with sections [data] [tpn] [proto] [fusion] [backbone] [adapter] [train] [ablation] [run]; "
         "run `scope_cli selfcheck --print-config` for every key and its default";
}

}  // namespace scope::pipeline
