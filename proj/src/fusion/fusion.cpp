#include "scope/fusion/fusion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "scope/core/binary_io.hpp"
#include "scope/core/error.hpp"

namespace scope::fusion {

namespace {

void check_pair(std::span<const double> m1, std::span<const double> m2) {
  if (m1.size() != m2.size()) throw DimensionError("ds_combine: BBAs over different frames");
  if (m1.empty()) throw ContractError("ds_combine: empty frame");
}

}  // namespace

Bba bba_from_logits(std::span<const double> logits) {
  if (!all_finite(logits)) throw NumericError("bba_from_logits: non-finite logit");
  return softmax(logits);
}

Bba ds_combine(std::span<const double> m1, std::span<const double> m2) {
  check_pair(m1, m2);
  Bba out(m1.size());
  double z = 0.0;
  for (std::size_t c = 0; c < m1.size(); ++c) {
    out[c] = m1[c] * m2[c];
    z += out[c];
  }
  if (!(z >= kConflictFloor)) throw ConflictError("ds_combine: total conflict between sources");
  for (double& v : out) v /= z;
  return out;
}

Bba ds_combine_bruteforce(std::span<const double> m1, std::span<const double> m2) {
  check_pair(m1, m2);
  const std::size_t K = m1.size();
  if (K > 63) throw ContractError("ds_combine_bruteforce: frame too large for bitmask focal sets");
  auto focal = [](std::span<const double> m) {
    std::map<std::uint64_t, double> f;
    for (std::size_t c = 0; c < m.size(); ++c)
      if (m[c] != 0.0) f[std::uint64_t{1} << c] += m[c];
    return f;
  };
  const auto f1 = focal(m1);
  const auto f2 = focal(m2);
  std::map<std::uint64_t, double> joint;
  for (const auto& [b, mb] : f1)
    for (const auto& [c, mc] : f2) joint[b & c] += mb * mc;
  // 1 - m(empty), summed over the non-empty intersections so rounding in the
  // input masses does not leak into the normaliser.
  double kept = 0.0;
  for (const auto& [a, v] : joint)
    if (a != 0) kept += v;
  if (!(kept >= kConflictFloor)) throw ConflictError("ds_combine_bruteforce: total conflict between sources");
  Bba out(K, 0.0);
  for (const auto& [a, v] : joint) {
    if (a == 0) continue;
    // Singleton inputs only ever intersect in singletons.
    const auto c = static_cast<std::size_t>(std::countr_zero(a));
    out[c] = v / kept;
  }
  return out;
}

double entropy_confidence(std::span<const double> m) {
  if (m.size() < 2) throw ContractError("entropy_confidence: need K >= 2");
  // a uniform mass has H = log K exactly; the summed form is off by an ulp for most K
  if (std::ranges::all_of(m, [&](double p) { return p == m[0]; })) return 0.0;
  double h = 0.0;
  for (double p : m)
    if (p > 0.0) h -= p * std::log(p);
  const double g = 1.0 - h / std::log(static_cast<double>(m.size()));
  return std::clamp(g, 0.0, 1.0);
}

std::vector<PseudoRecord> build_pseudo_manifest(const Matrix& prior_logits,
                                                std::span<const std::int32_t> prior_labels,
                                                const Matrix& proto_logits,
                                                std::span<const std::int32_t> proto_labels,
                                                const FusionOptions& opts) {
  const std::size_t N = prior_logits.rows();
  if (proto_logits.rows() != N || prior_labels.size() != N || proto_labels.size() != N)
    throw DimensionError("build_pseudo_manifest: inputs are not aligned");
  if (proto_logits.cols() != prior_logits.cols()) throw DimensionError("build_pseudo_manifest: class counts differ");
  if (!(opts.rho >= 0.0 && opts.rho < 1.0)) throw ConfigError("build_pseudo_manifest: rho must lie in [0, 1)");
  if (!(opts.proto_temperature > 0.0)) throw ConfigError("build_pseudo_manifest: temperature must be positive");

  std::vector<PseudoRecord> out(N);
  Vector scaled(proto_logits.cols());
  for (std::size_t j = 0; j < N; ++j) {
    PseudoRecord& r = out[j];
    r.index = j;
    r.y_prior = prior_labels[j];
    r.y_proto = proto_labels[j];
    r.agree = r.y_prior == r.y_proto;
    for (std::size_t k = 0; k < scaled.size(); ++k) scaled[k] = proto_logits(j, k) / opts.proto_temperature;
    try {
      r.fused_masses = ds_combine(bba_from_logits(prior_logits.row(j)), bba_from_logits(scaled));
      r.gamma = entropy_confidence(r.fused_masses);
    } catch (const ConflictError&) {
      r.fused_masses.clear();
      r.gamma = 0.0;
    }
    r.selected = r.agree && !r.fused_masses.empty() && r.gamma > opts.rho;
  }
  return out;
}

std::vector<PseudoRecord> reselect(std::vector<PseudoRecord> records, double rho) {
  for (auto& r : records) r.selected = r.agree && !r.fused_masses.empty() && r.gamma > rho;
  return records;
}

double coverage(const std::vector<PseudoRecord>& records) {
  if (records.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& r : records) n += r.selected;
  return static_cast<double>(n) / static_cast<double>(records.size());
}

std::string manifest_to_jsonl(const std::vector<PseudoRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["index"] = r.index;
    j["y_prior"] = r.y_prior;
    j["y_proto"] = r.y_proto;
    j["agree"] = r.agree;
    j["gamma"] = r.gamma;
    j["selected"] = r.selected;
    j["fused_masses"] = r.fused_masses;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<PseudoRecord> manifest_from_jsonl(const std::string& text) {
  std::vector<PseudoRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PseudoRecord r;
      r.index = j.at("index").get<std::size_t>();
      r.y_prior = j.at("y_prior").get<std::int32_t>();
      r.y_proto = j.at("y_proto").get<std::int32_t>();
      r.agree = j.at("agree").get<bool>();
      r.gamma = j.at("gamma").get<double>();
      r.selected = j.at("selected").get<bool>();
      r.fused_masses = j.at("fused_masses").get<Bba>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("pseudo manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::vector<PseudoRecord>& records, const std::filesystem::path& path) {
  io::write_text(path, manifest_to_jsonl(records));
}

std::vector<PseudoRecord> read_manifest(const std::filesystem::path& path) {
  return manifest_from_jsonl(io::read_text(path));
}

}  // namespace scope::fusion
