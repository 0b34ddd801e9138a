// scope_cli: the two-stage pipeline, one step per subcommand.
//
// All subcommands share --config, --set key=value, --out and --seed. Inputs
// default to the files earlier steps wrote into the same --out directory, so
//
//   scope_cli gen-data --out run && scope_cli train-tpn --out run && ...
//
// chains without further flags. Exit codes: 0 ok, 1 usage/config error,
// 2 runtime failure.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "scope/core/binary_io.hpp"
#include "scope/core/error.hpp"
#include "scope/core/kernels.hpp"
#include "scope/pipeline/config.hpp"
#include "scope/pipeline/pipeline.hpp"
#include "scope/pipeline/selfcheck.hpp"

namespace fs = std::filesystem;
using scope::io::read_text;
using scope::io::write_text;
using namespace scope;
using namespace scope::pipeline;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool print_config = false;
  int verbosity = 1;

  std::string cohort, tpn, bank, manifest, adapter, sweep;
  std::string split = "test";
  std::size_t seeds = 0;
  std::size_t threads = 1;
  std::vector<std::string> variants;
};

class Log {
 public:
  Log(int verbosity, const fs::path& file) : verbosity_(verbosity) {
    if (!file.empty()) file_.open(file, std::ios::app);
  }
  void info(const std::string& msg) { write(1, msg); }
  void debug(const std::string& msg) { write(2, msg); }
  void warn(const std::string& msg) { write(0, "warning: " + msg); }

 private:
  void write(int level, const std::string& msg) {
    if (level <= verbosity_) std::cerr << msg << '\n';
    if (file_) {
      const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
      std::tm tm{};
      localtime_r(&now, &tm);
      file_ << std::put_time(&tm, "%F %T") << ' ' << msg << '\n';
    }
  }
  int verbosity_;
  std::ofstream file_;
};

ScopeConfig effective_config(const Options& o) {
  ScopeConfig cfg = o.config_path.empty() ? ScopeConfig{} : load_config(o.config_path);
  for (const auto& kv : o.overrides) apply_override(cfg, kv);
  cfg.validate();
  return cfg;
}

fs::path output_dir(const Options& o, const ScopeConfig& cfg) {
  if (!o.out.empty()) return o.out;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* root = std::getenv("SCOPE_OUTPUT_ROOT"); root && *root) return root;
  return "scope_out";
}

fs::path input(const std::string& flag, const fs::path& dir, const char* name) {
  return flag.empty() ? dir / name : fs::path(flag);
}

std::uint64_t run_seed(const Options& o, const ScopeConfig& cfg) { return o.seed ? *o.seed : cfg.seeds.front(); }

struct Context {
  const Options& opt;
  ScopeConfig cfg;
  fs::path dir;
  Log log;

  Context(const Options& o, const std::string& command)
      : opt(o), cfg(effective_config(o)), dir(output_dir(o, cfg)), log(o.verbosity, prepare(dir, command)) {
    write_text(dir / (command + ".config.ini"), config_to_ini(cfg));
    log.debug("kernels: " + std::string(kernels::isa_name(kernels::active_isa())));
  }

  static fs::path prepare(const fs::path& dir, const std::string& command) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir / (command + ".log");
  }

  data::Cohort cohort() {
    fs::path path = opt.cohort;
    if (path.empty() && !cfg.cohort_path.empty()) path = cfg.cohort_path;
    if (path.empty() && fs::exists(dir / "cohort.bin")) path = dir / "cohort.bin";
    if (path.empty()) {
      log.info("no cohort file given; generating from [data] (seed " + std::to_string(cfg.data.seed) + ")");
      return data::generate_cohort(cfg.data);
    }
    log.info("cohort: " + path.string());
    return data::read_cohort(path);
  }

  void write(const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    log.info("wrote " + (dir / name).string());
  }
};

int cmd_gen_data(const Options& o) {
  Options opt = o;
  if (o.seed) opt.overrides.push_back("data.seed=" + std::to_string(*o.seed));
  Context ctx(opt, "gen-data");
  const data::Cohort cohort = data::generate_cohort(ctx.cfg.data);
  data::write_cohort(cohort, ctx.dir / "cohort.bin");
  ctx.log.info("wrote " + (ctx.dir / "cohort.bin").string() + " (" + std::to_string(cohort.labeled.size()) +
               " labelled, " + std::to_string(cohort.unlabeled.size()) + " unlabelled, " +
               std::to_string(cohort.validation.size()) + " validation, " + std::to_string(cohort.test.size()) +
               " test)");
  return 0;
}

int cmd_train_tpn(const Options& o) {
  Context ctx(o, "train-tpn");
  const data::TrackedCohort cohort(ctx.cohort());
  tpn::TpnTrainingLog log;
  const tpn::TpnModel model = train_prior(ctx.cfg, cohort, run_seed(o, ctx.cfg), &log);
  for (const auto& w : log.warnings) ctx.log.warn(w);
  tpn::save_tpn(model, ctx.dir / "tpn.ckpt", config_to_json(ctx.cfg));
  ctx.log.info("wrote " + (ctx.dir / "tpn.ckpt").string());
  ctx.write("tpn_log.json", log.to_json());
  return 0;
}

int cmd_build_prototypes(const Options& o) {
  Context ctx(o, "build-prototypes");
  const data::TrackedCohort cohort(ctx.cohort());
  const tpn::TpnModel model = tpn::load_tpn(input(o.tpn, ctx.dir, "tpn.ckpt"));
  proto::RefineLog log;
  std::vector<std::string> warnings;
  const proto::PrototypeBank bank = build_bank(ctx.cfg, cohort, model, run_seed(o, ctx.cfg), &log, &warnings);
  for (const auto& w : warnings) ctx.log.warn(w);
  proto::save_bank(bank, ctx.dir / "bank.ckpt");
  ctx.log.info("wrote " + (ctx.dir / "bank.ckpt").string());
  ctx.write("refine_log.json", log.to_json());
  return 0;
}

int cmd_pseudo_label(const Options& o) {
  Context ctx(o, "pseudo-label");
  const data::TrackedCohort cohort(ctx.cohort());
  const tpn::TpnModel model = tpn::load_tpn(input(o.tpn, ctx.dir, "tpn.ckpt"));
  const proto::PrototypeBank bank = proto::load_bank(input(o.bank, ctx.dir, "bank.ckpt"));
  const auto manifest = label_unlabeled(ctx.cfg, cohort, model, bank);
  if (manifest.empty()) ctx.log.warn("unlabelled split is empty; the manifest is empty");
  fusion::write_manifest(manifest, ctx.dir / "manifest.jsonl");
  std::size_t agree = 0, selected = 0;
  for (const auto& r : manifest) {
    agree += r.agree;
    selected += r.selected;
  }
  ctx.log.info("wrote " + (ctx.dir / "manifest.jsonl").string() + ": " + std::to_string(manifest.size()) +
               " records, " + std::to_string(agree) + " agree, " + std::to_string(selected) + " selected at rho " +
               get_config_value(ctx.cfg, "fusion.rho"));
  return 0;
}

Stage1Result load_stage1(Context& ctx) {
  Stage1Result s1;
  s1.tpn = tpn::load_tpn(input(ctx.opt.tpn, ctx.dir, "tpn.ckpt"));
  s1.bank = proto::load_bank(input(ctx.opt.bank, ctx.dir, "bank.ckpt"));
  s1.manifest = fusion::read_manifest(input(ctx.opt.manifest, ctx.dir, "manifest.jsonl"));
  return s1;
}

int cmd_adapt(const Options& o) {
  Context ctx(o, "adapt");
  const data::TrackedCohort cohort(ctx.cohort());
  const Stage1Result s1 = load_stage1(ctx);
  if (s1.manifest.size() != cohort.unlabeled().size())
    throw ContractError("manifest has " + std::to_string(s1.manifest.size()) + " records but the cohort has " +
                        std::to_string(cohort.unlabeled().size()) + " unlabelled samples");
  // the stored selection was made at the rho of the pseudo-label run
  const auto manifest = fusion::reselect(s1.manifest, ctx.cfg.fusion.rho);
  Stage1Result stage1 = s1;
  stage1.manifest = manifest;
  Stage2Result s2 = run_stage2(ctx.cfg, cohort, stage1, run_seed(o, ctx.cfg));
  s2.report.variant = "cli";
  for (const auto& w : s2.report.warnings) ctx.log.warn(w);
  for (const auto& e : s2.report.epochs) {
    std::ostringstream os;
    os << "epoch " << e.epoch << " l_sup " << e.l_sup << " l_pseudo " << e.l_pseudo << " pseudo " << e.pseudo_samples
       << " val " << (e.validation_metric ? std::to_string(*e.validation_metric) : "-");
    ctx.log.debug(os.str());
  }
  ctx.log.info("stage II " + std::to_string(s2.report.stage2_seconds) + " s");
  adapter::save_adapter(s2.model, ctx.dir / "adapter.ckpt", config_to_json(ctx.cfg));
  ctx.log.info("wrote " + (ctx.dir / "adapter.ckpt").string());
  ctx.write("run_report.json", s2.report.to_json(false));
  if (s2.report.test.kappa) ctx.log.info("test kappa " + std::to_string(*s2.report.test.kappa));
  return 0;
}

int cmd_evaluate(const Options& o) {
  Context ctx(o, "evaluate");
  const data::Split split = data::parse_split(o.split);
  const data::TrackedCohort cohort(ctx.cohort());
  const tpn::TpnModel model = tpn::load_tpn(input(o.tpn, ctx.dir, "tpn.ckpt"));
  const proto::PrototypeBank bank = proto::load_bank(input(o.bank, ctx.dir, "bank.ckpt"));
  const adapter::AdapterModel ada = adapter::load_adapter(input(o.adapter, ctx.dir, "adapter.ckpt"));
  const auto report = evaluate_split(ctx.cfg, cohort, model, bank, ada, split);
  ctx.write("metrics_" + std::string(data::split_name(split)) + ".json", report.to_json());
  std::cout << report.to_json() << '\n';
  return 0;
}

std::string ablation_table_md(const nlohmann::json& sweep) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "| variant | seeds | kappa | weighted F1 | accuracy | delta kappa |\n|---|---|---|---|---|---|\n";
  double full = 0.0;
  for (const auto& s : sweep.at("summaries"))
    if (s.at("variant") == "scope") full = s.at("kappa_mean").get<double>();
  for (const auto& s : sweep.at("summaries")) {
    const double k = s.at("kappa_mean").get<double>();
    os << "| " << s.at("variant").get<std::string>() << " | " << s.at("completed_seeds").get<std::size_t>() << " | "
       << k << " ± " << s.at("kappa_std").get<double>() << " | " << s.at("weighted_f1_mean").get<double>() << " ± "
       << s.at("weighted_f1_std").get<double>() << " | " << s.at("accuracy_mean").get<double>() << " ± "
       << s.at("accuracy_std").get<double>() << " | " << std::showpos << k - full << std::noshowpos << " |\n";
  }
  for (const auto& inv : sweep.at("inversions")) os << "\ninversion: " << inv.get<std::string>() << '\n';
  return os.str();
}

int cmd_report(const Options& o) {
  Context ctx(o, "report");
  bool wrote = false;
  const fs::path manifest_path = input(o.manifest, ctx.dir, "manifest.jsonl");
  if (fs::exists(manifest_path)) {
    const data::TrackedCohort cohort(ctx.cohort());
    const auto manifest = fusion::read_manifest(manifest_path);
    const auto rows = metrics::pseudo_quality_report(manifest, cohort.unlabeled_truth(), cohort.num_classes(),
                                                     metrics::default_rho_grid());
    ctx.write("pseudo_quality.csv", metrics::pseudo_quality_csv(rows, cohort.num_classes()));
    wrote = true;
  } else if (!o.manifest.empty()) {
    throw IoError("manifest not found: " + manifest_path.string());
  }
  const fs::path sweep_path = input(o.sweep, ctx.dir, "sweep.json");
  if (fs::exists(sweep_path)) {
    nlohmann::json sweep;
    try {
      sweep = nlohmann::json::parse(read_text(sweep_path));
      ctx.write("ablation_table.md", ablation_table_md(sweep));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("sweep report " + sweep_path.string() + ": " + e.what());
    }
    wrote = true;
  } else if (!o.sweep.empty()) {
    throw IoError("sweep report not found: " + sweep_path.string());
  }
  if (!wrote) throw ContractError("nothing to report: no manifest.jsonl or sweep.json in " + ctx.dir.string());
  return 0;
}

int cmd_sweep(const Options& o) {
  Options opt = o;
  if (o.seeds) {
    std::string s;
    for (std::size_t i = 1; i <= o.seeds; ++i) s += (i > 1 ? "," : "") + std::to_string(i);
    opt.overrides.push_back("run.seeds=" + s);
  }
  Context ctx(opt, "sweep");
  const data::Cohort cohort = ctx.cohort();
  std::vector<Variant> variants;
  for (const auto& v : default_variants())
    if (o.variants.empty() || std::ranges::find(o.variants, v.name) != o.variants.end()) variants.push_back(v);
  for (const auto& name : o.variants)
    if (std::ranges::find(variants, name, &Variant::name) == variants.end())
      throw ConfigError("unknown variant '" + name + "'");
  ctx.log.info("sweep: " + std::to_string(ctx.cfg.seeds.size()) + " seeds x " + std::to_string(variants.size()) +
               " variants");
  const ExperimentReport rep = run_experiment_matrix(ctx.cfg, cohort, variants, o.threads);
  for (const auto& f : rep.failures) ctx.log.warn("failed: " + f);
  for (const auto& i : rep.inversions) ctx.log.warn("ablation inversion: " + i);
  ctx.log.info("sweep " + std::to_string(rep.seconds) + " s");
  ctx.write("sweep.json", rep.to_json(false));
  ctx.write("comparison.csv", rep.comparison_csv());
  ctx.write("seeds.csv", rep.seeds_csv());
  for (const auto& q : rep.quality)
    ctx.write("pseudo_quality_seed" + std::to_string(q.seed) + ".csv", metrics::pseudo_quality_csv(q.rows, cohort.num_classes));
  std::cout << rep.comparison_csv();
  return rep.runs.empty() ? kExitRuntime : 0;
}

int cmd_selfcheck(const Options& o) {
  const auto results = run_selfcheck(o.seed.value_or(1));
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    ok = ok && r.passed;
  }
  std::cout << (ok ? "selfcheck: all checks passed" : "selfcheck: FAILED") << '\n';
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage semi-supervised adaptation of a frozen backbone on a synthetic EEG-like cohort"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config_path, "INI config file");
    sub->add_option("-s,--set", o.overrides, "override, section.key=value (repeatable)");
    sub->add_option("-o,--out", o.out, "output directory (default: run.output_dir, $SCOPE_OUTPUT_ROOT, scope_out)");
    sub->add_option("--seed", o.seed, "run seed (default: first of run.seeds)");
    sub->add_flag("--print-config", o.print_config, "print the effective config and exit");
    sub->add_flag_callback("-v,--verbose", [&] { o.verbosity = 2; }, "per-epoch progress");
    sub->add_flag_callback("-q,--quiet", [&] { o.verbosity = 0; }, "warnings only");
    sub->add_option("--cohort", o.cohort, "cohort file (default: data.cohort_path, <out>/cohort.bin, generated)");
  };
  auto with_artifacts = [&](CLI::App* sub, bool bank, bool manifest, bool adapter) {
    sub->add_option("--tpn", o.tpn, "task-prior checkpoint (default <out>/tpn.ckpt)");
    if (bank) sub->add_option("--bank", o.bank, "prototype bank (default <out>/bank.ckpt)");
    if (manifest) sub->add_option("--manifest", o.manifest, "pseudo-label manifest (default <out>/manifest.jsonl)");
    if (adapter) sub->add_option("--adapter", o.adapter, "adapter checkpoint (default <out>/adapter.ckpt)");
  };

  std::vector<std::pair<CLI::App*, int (*)(const Options&)>> commands;
  auto add = [&](const char* name, const char* help, int (*fn)(const Options&)) {
    CLI::App* sub = app.add_subcommand(name, help);
    common(sub);
    commands.emplace_back(sub, fn);
    return sub;
  };
  add("gen-data", "generate the synthetic cohort", cmd_gen_data);
  add("train-tpn", "train the task-prior network on the labelled split", cmd_train_tpn);
  with_artifacts(add("build-prototypes", "initialise and refine the prototype bank", cmd_build_prototypes), false,
                 false, false);
  with_artifacts(add("pseudo-label", "fuse prior and prototype predictions into a manifest", cmd_pseudo_label), true,
                 false, false);
  with_artifacts(add("adapt", "train adapters and head (stage II)", cmd_adapt), true, true, false);
  auto* eval = add("evaluate", "metrics of an adapter checkpoint on a split", cmd_evaluate);
  with_artifacts(eval, true, false, true);
  eval->add_option("--split", o.split, "labeled, validation or test")->check(CLI::IsMember({"labeled", "validation", "test"}));
  auto* report = add("report", "pseudo-label coverage/quality CSV and ablation table", cmd_report);
  report->add_option("--manifest", o.manifest, "pseudo-label manifest (default <out>/manifest.jsonl)");
  report->add_option("--sweep", o.sweep, "sweep.json from a sweep run (default <out>/sweep.json)");
  auto* sweep = add("sweep", "experiment matrix over seeds and variants", cmd_sweep);
  sweep->add_option("--seeds", o.seeds, "use seeds 1..N")->check(CLI::PositiveNumber);
  sweep->add_option("--threads", o.threads, "seeds run in parallel")->check(CLI::PositiveNumber);
  sweep->add_option("--variants", o.variants, "subset of variants")->delimiter(',');
  add("selfcheck", "gradient checks, kernel equivalence, Sinkhorn, fusion and metric oracles", cmd_selfcheck);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (o.print_config) {
      std::cout << config_to_ini(effective_config(o));
      return 0;
    }
    for (const auto& [sub, fn] : commands)
      if (sub->parsed()) return fn(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (std::string(e.what()).find("scope_cli selfcheck --print-config") == std::string::npos)
      std::cerr << config_schema_hint() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
