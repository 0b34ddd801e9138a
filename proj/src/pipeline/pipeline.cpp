#include "scope/pipeline/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "scope/core/digest.hpp"
#include "scope/core/error.hpp"
#include "scope/core/kernels.hpp"

namespace scope::pipeline {

namespace {

using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Rethrows the in-flight scope error with the step prepended, keeping its type.
[[noreturn]] void rethrow_in(const std::string& step) {
  try {
    throw;
  } catch (const TruncationError&) {
    throw;
  } catch (const NumericError& e) {
    throw NumericError(step + ": " + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(step + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(step + ": " + e.what());
  } catch (const ContractError& e) {
    throw ContractError(step + ": " + e.what());
  } catch (const ConflictError& e) {
    throw ConflictError(step + ": " + e.what());
  } catch (const Error& e) {
    throw Error(step + ": " + e.what());
  }
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

struct Cached {
  std::vector<Matrix> lower;
  Matrix varpi;
};

Cached cache_features(const ScopeConfig& cfg, const adapter::FrozenBackbone& bb, const adapter::AdapterModel& model,
                      const tpn::TpnModel& tpn, const proto::PrototypeBank& bank,
                      const std::vector<data::Sample>& samples) {
  Cached c;
  c.lower.reserve(samples.size());
  for (const auto& s : samples) c.lower.push_back(adapter::lower_features(bb, model, s.features));
  c.varpi = conditioning_vectors(cfg, tpn, bank, samples);
  return c;
}

Matrix probs_from_cache(const adapter::FrozenBackbone& bb, const adapter::AdapterModel& model, const Cached& c) {
  Matrix p(c.lower.size(), model.num_classes());
  for (std::size_t i = 0; i < c.lower.size(); ++i) {
    const Vector s = softmax(adapter::adapted_logits(bb, model, c.lower[i], c.varpi.row(i)));
    std::copy(s.begin(), s.end(), p.row(i).begin());
  }
  return p;
}

std::vector<std::int32_t> labels_of(const std::vector<data::Sample>& samples) {
  std::vector<std::int32_t> y;
  y.reserve(samples.size());
  for (const auto& s : samples) y.push_back(s.label);
  return y;
}

std::optional<double> selection_value(const metrics::ClassificationReport& r) {
  return r.num_classes == 2 ? r.auroc : r.kappa;
}

// Weight decay applies to weight matrices; biases are excluded.
std::vector<unsigned char> decay_mask(const adapter::AdapterModel& m) {
  std::vector<unsigned char> mask(m.params().size(), 0);
  const auto& lay = m.layer_layout();
  for (std::size_t l = 0; l < m.config().depth; ++l) {
    const std::size_t base = l * lay.size;
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(base + lay.w_self), 4 * lay.D * lay.D, 1);
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(base + lay.w_proto), 2 * lay.D * lay.K, 1);
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(base + lay.w_gate), lay.K, 1);
  }
  std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(m.head_offset()), m.num_classes() * m.width(), 1);
  return mask;
}

json report_json(const metrics::ClassificationReport& r) {
  if (r.samples == 0) return nullptr;
  return json::parse(r.to_json());
}

}  // namespace

ScopeConfig bind_to_cohort(ScopeConfig cfg, const data::TrackedCohort& cohort) {
  cfg.tpn_arch.channels = cohort.channels();
  cfg.tpn_arch.time_points = cohort.time_points();
  cfg.tpn_arch.num_classes = cohort.num_classes();
  cfg.backbone.channels = cohort.channels();
  cfg.backbone.time_points = cohort.time_points();
  cfg.data.num_classes = cohort.num_classes();
  cfg.data.channels = cohort.channels();
  cfg.data.time_points = cohort.time_points();
  return cfg;
}

data::Cohort obtain_cohort(const ScopeConfig& cfg) {
  if (!cfg.cohort_path.empty()) return data::read_cohort(cfg.cohort_path);
  return data::generate_cohort(cfg.data);
}

tpn::TpnModel train_prior(const ScopeConfig& base, const data::TrackedCohort& cohort, std::uint64_t seed,
                          tpn::TpnTrainingLog* log) {
  const ScopeConfig cfg = bind_to_cohort(base, cohort);
  const auto& labeled = cohort.labeled();
  if (labeled.empty()) throw ContractError("stage I: the labelled split is empty");
  tpn::TpnTrainConfig tc = cfg.tpn;
  tc.seed = seed;
  if (cfg.ablation.etf_off) tc.etf_weight = 0.0;
  try {
    return tpn::train_tpn(labeled, cfg.tpn_arch, tc, log);
  } catch (const Error&) {
    rethrow_in("stage I, task-prior training");
  }
}

proto::PrototypeBank build_bank(const ScopeConfig& base, const data::TrackedCohort& cohort, const tpn::TpnModel& tpn,
                                std::uint64_t seed, proto::RefineLog* log, std::vector<std::string>* warnings) {
  const ScopeConfig cfg = bind_to_cohort(base, cohort);
  try {
    const tpn::PriorPrediction prior = tpn::prior_predict(tpn, cohort.unlabeled());
    std::vector<std::string> init_warnings;
    proto::PrototypeBank bank = proto::init_prototypes_kmeans(prior.embeddings, prior.labels, cohort.num_classes(),
                                                              cfg.prototypes_per_class, seed, cfg.proto_init,
                                                              &init_warnings);
    if (warnings)
      for (const auto& w : init_warnings) warnings->push_back("prototype init: " + w);
    bank.epsilon = cfg.proto.epsilon;
    bank.tau = cfg.proto.tau;

    proto::RefineConfig rc = cfg.proto;
    rc.seed = seed;
    rc.use_sinkhorn = !cfg.ablation.sinkhorn_off;
    const auto& labeled = cohort.labeled();
    return proto::refine_prototypes(std::move(bank), tpn::encode_batch(tpn, labeled), labels_of(labeled), rc, log);
  } catch (const Error&) {
    rethrow_in("stage I, prototype bank");
  }
}

std::vector<fusion::PseudoRecord> label_unlabeled(const ScopeConfig& base, const data::TrackedCohort& cohort,
                                                  const tpn::TpnModel& tpn, const proto::PrototypeBank& bank) {
  const ScopeConfig cfg = bind_to_cohort(base, cohort);
  const auto& unlabeled = cohort.unlabeled();
  if (unlabeled.empty()) return {};
  try {
    const tpn::PriorPrediction prior = tpn::prior_predict(tpn, unlabeled);
    const std::size_t K = cohort.num_classes();
    Matrix proto_logits(unlabeled.size(), K);
    std::vector<std::int32_t> proto_labels(unlabeled.size());
    for (std::size_t j = 0; j < unlabeled.size(); ++j) {
      const auto p = proto::proto_predict(prior.embeddings.row(j), bank);
      std::copy(p.class_logits.begin(), p.class_logits.end(), proto_logits.row(j).begin());
      proto_labels[j] = p.label;
    }
    return fusion::build_pseudo_manifest(prior.logits, prior.labels, proto_logits, proto_labels, cfg.fusion);
  } catch (const Error&) {
    rethrow_in("stage I, pseudo-labels");
  }
}

Stage1Result run_stage1(const ScopeConfig& cfg, const data::TrackedCohort& cohort, std::uint64_t seed) {
  const auto t0 = Clock::now();
  Stage1Result r;
  r.tpn = train_prior(cfg, cohort, seed, &r.tpn_log);
  for (const auto& w : r.tpn_log.warnings) r.warnings.push_back("tpn: " + w);
  r.bank = build_bank(cfg, cohort, r.tpn, seed, &r.refine_log, &r.warnings);
  if (cohort.unlabeled().empty())
    r.warnings.push_back("unlabelled split is empty; the manifest is empty and stage II is supervised only");
  r.manifest = label_unlabeled(cfg, cohort, r.tpn, r.bank);
  r.seconds = seconds_since(t0);
  return r;
}

CyclicSampler::CyclicSampler(std::vector<std::size_t> items, Rng rng) : items_(std::move(items)), rng_(rng) {
  rng_.shuffle(items_);
}

std::size_t CyclicSampler::next() {
  if (items_.empty()) throw ContractError("CyclicSampler: nothing to sample");
  if (pos_ == items_.size()) {
    rng_.shuffle(items_);
    pos_ = 0;
    ++cycles_;
  }
  return items_[pos_++];
}

Matrix conditioning_vectors(const ScopeConfig& cfg, const tpn::TpnModel& tpn, const proto::PrototypeBank& bank,
                            const std::vector<data::Sample>& samples) {
  const std::size_t K = bank.num_classes;
  Matrix v(samples.size(), K);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (cfg.ablation.prototype_conditioning_off) {
      for (std::size_t k = 0; k < K; ++k) v(i, k) = 1.0 / static_cast<double>(K);
      continue;
    }
    const auto p = proto::proto_predict(tpn::encode(tpn, samples[i].features), bank);
    std::copy(p.class_logits.begin(), p.class_logits.end(), v.row(i).begin());
  }
  return v;
}

Matrix predict_probs(const adapter::FrozenBackbone& backbone, const adapter::AdapterModel& model,
                     const std::vector<data::Sample>& samples, const Matrix& varpi) {
  if (varpi.rows() != samples.size()) throw DimensionError("predict_probs: one varpi row per sample required");
  Matrix p(samples.size(), model.num_classes());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Vector s = softmax(adapter::adapted_forward(backbone, model, samples[i].features, varpi.row(i)));
    std::copy(s.begin(), s.end(), p.row(i).begin());
  }
  return p;
}

metrics::ClassificationReport evaluate_split(const ScopeConfig& base, const data::TrackedCohort& cohort,
                                             const tpn::TpnModel& tpn, const proto::PrototypeBank& bank,
                                             const adapter::AdapterModel& model, data::Split split) {
  if (split == data::Split::unlabeled) throw ContractError("evaluate: the unlabelled split carries no labels");
  const ScopeConfig cfg = bind_to_cohort(base, cohort);
  const adapter::FrozenBackbone backbone(cfg.backbone);
  if (model.width() != backbone.width() || model.num_classes() != cohort.num_classes())
    throw ConfigError("evaluate: adapter checkpoint (width " + std::to_string(model.width()) + ", " +
                      std::to_string(model.num_classes()) + " classes) does not match the configured backbone (width " +
                      std::to_string(backbone.width()) + ") and cohort (" + std::to_string(cohort.num_classes()) +
                      " classes)");
  const auto& samples = split == data::Split::labeled      ? cohort.labeled()
                        : split == data::Split::validation ? cohort.validation()
                                                           : cohort.test();
  if (samples.empty()) throw ContractError("evaluate: split '" + std::string(data::split_name(split)) + "' is empty");
  const Cached c = cache_features(cfg, backbone, model, tpn, bank, samples);
  return metrics::evaluate(labels_of(samples), probs_from_cache(backbone, model, c));
}

Stage2Result run_stage2(const ScopeConfig& base, const data::TrackedCohort& cohort, const Stage1Result& stage1,
                        std::uint64_t seed) {
  const auto t0 = Clock::now();
  const ScopeConfig cfg = bind_to_cohort(base, cohort);
  cfg.validate();
  const std::size_t K = cohort.num_classes();
  const adapter::FrozenBackbone backbone(cfg.backbone);

  RunReport rep;
  rep.seed = seed;
  rep.stage1_seconds = stage1.seconds;
  rep.warnings = stage1.warnings;
  rep.selection_metric = K == 2 ? "auroc" : "kappa";
  rep.backbone_digest_before = backbone.digest();

  adapter::AdapterConfig ac = cfg.adapter;
  if (cfg.ablation.adapter_off) ac.depth = 0;
  adapter::AdapterModel model = adapter::AdapterModel::initialize(ac, backbone.width(), K, seed);
  rep.trainable_ratio = adapter::trainable_ratio(backbone, model);

  const auto& labeled = cohort.labeled();
  const Cached lab = cache_features(cfg, backbone, model, stage1.tpn, stage1.bank, labeled);

  // Selected pseudo-labelled samples; the mask is folded into the sampler.
  std::vector<data::Sample> pseudo_samples;
  std::vector<std::int32_t> pseudo_labels;
  std::vector<double> pseudo_weights;
  for (const auto& r : stage1.manifest) {
    if (!r.selected) continue;
    pseudo_samples.push_back(cohort.unlabeled().at(r.index));
    pseudo_labels.push_back(r.y_prior);
    pseudo_weights.push_back(cfg.ablation.confidence_weights_off ? 1.0 : r.gamma);
  }
  const Cached pse = cache_features(cfg, backbone, model, stage1.tpn, stage1.bank, pseudo_samples);

  rep.manifest.size = stage1.manifest.size();
  rep.manifest.selected = pseudo_samples.size();
  rep.manifest.coverage = fusion::coverage(stage1.manifest);
  if (!stage1.manifest.empty() && !pseudo_samples.empty()) {
    const auto& truth = cohort.unlabeled_truth();
    metrics::ConfusionMatrix cm(K);
    for (const auto& r : stage1.manifest)
      if (r.selected) cm.add(truth.at(r.index), r.y_prior);
    rep.manifest.selected_accuracy = metrics::accuracy(cm);
    try {
      rep.manifest.selected_kappa = metrics::cohen_kappa(cm);
    } catch (const UndefinedMetricError&) {
    }
  }

  const std::size_t E = cfg.train.epochs, B = cfg.train.batch_size;
  const std::size_t pseudo_per_batch = static_cast<std::size_t>(std::floor(cfg.train.pseudo_ratio * static_cast<double>(B)));
  const bool pseudo_available = !pseudo_samples.empty() && pseudo_per_batch > 0;
  const bool pseudo_wanted = cfg.train.warmup_epochs < E || cfg.train.strategy == Strategy::no_warmup;
  if (pseudo_samples.empty() && pseudo_wanted)
    rep.warnings.push_back("no pseudo-labelled sample passed selection; stage II trains on labelled data only");

  std::vector<std::size_t> pseudo_idx(pseudo_samples.size());
  std::iota(pseudo_idx.begin(), pseudo_idx.end(), std::size_t{0});
  CyclicSampler sampler(pseudo_idx, Rng::derive(seed, "stage2/pseudo"));
  Rng order_rng = Rng::derive(seed, "stage2/labeled");

  const auto& validation = cohort.validation();
  const std::vector<std::int32_t> val_y = labels_of(validation);
  const Cached val = cache_features(cfg, backbone, model, stage1.tpn, stage1.bank, validation);

  Optimizer opt(cfg.train.optimizer, model.params().size());
  const auto mask = decay_mask(model);
  Vector g_sup, g_pse, grad(model.params().size());
  Vector best_params(model.params().begin(), model.params().end());
  std::optional<double> best;

  std::vector<std::size_t> order(labeled.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t e = 0; e < E; ++e) {
    EpochStats st;
    st.epoch = e;
    st.learning_rate = cosine_lr(cfg.train.optimizer.learning_rate, cfg.train.min_learning_rate, e, E);
    opt.set_learning_rate(st.learning_rate);
    const bool pseudo_on =
        pseudo_available && (cfg.train.strategy == Strategy::no_warmup || e >= cfg.train.warmup_epochs);
    const bool labeled_on = !(cfg.train.strategy == Strategy::two_stage && pseudo_on);
    order_rng.shuffle(order);
    const std::size_t batches = (order.size() + B - 1) / B;

    std::size_t sup_steps = 0, pse_steps = 0;
    auto labeled_items = [&](std::size_t b) {
      std::vector<adapter::LossItem> items;
      const std::size_t lo = b * B, hi = std::min(order.size(), lo + B);
      for (std::size_t t = lo; t < hi; ++t) {
        const std::size_t i = order[t];
        items.push_back({&lab.lower[i], lab.varpi.row(i), labeled[i].label, 1.0 / static_cast<double>(hi - lo)});
      }
      return items;
    };
    auto pseudo_items = [&]() {
      std::vector<adapter::LossItem> items;
      for (std::size_t t = 0; t < pseudo_per_batch; ++t) {
        const std::size_t j = sampler.next();
        items.push_back({&pse.lower[j], pse.varpi.row(j), pseudo_labels[j],
                         pseudo_weights[j] / static_cast<double>(pseudo_per_batch)});
      }
      st.pseudo_samples += items.size();
      return items;
    };
    auto step = [&](const std::vector<adapter::LossItem>* sup, const std::vector<adapter::LossItem>* pse_items) {
      std::fill(grad.begin(), grad.end(), 0.0);
      if (sup) {
        st.l_sup += adapter::adapter_loss_and_grad(backbone, model, *sup, &g_sup);
        kernels::axpy(1.0, g_sup, grad);
        ++sup_steps;
      }
      if (pse_items) {
        st.l_pseudo += adapter::adapter_loss_and_grad(backbone, model, *pse_items, &g_pse);
        kernels::axpy(1.0, g_pse, grad);
        ++pse_steps;
      }
      if (!all_finite(grad))
        throw NumericError("stage II: non-finite gradient at epoch " + std::to_string(e));
      opt.step(model.mutable_params(), grad, mask);
    };

    if (!labeled_on) {
      for (std::size_t b = 0; b < batches; ++b) {
        const auto p = pseudo_items();
        step(nullptr, &p);
      }
    } else if (pseudo_on && cfg.train.strategy == Strategy::sequential) {
      for (std::size_t b = 0; b < batches; ++b) {
        const auto s = labeled_items(b);
        step(&s, nullptr);
      }
      for (std::size_t b = 0; b < batches; ++b) {
        const auto p = pseudo_items();
        step(nullptr, &p);
      }
    } else {
      for (std::size_t b = 0; b < batches; ++b) {
        const auto s = labeled_items(b);
        if (pseudo_on) {
          const auto p = pseudo_items();
          step(&s, &p);
        } else {
          step(&s, nullptr);
        }
      }
    }
    if (sup_steps) st.l_sup /= static_cast<double>(sup_steps);
    if (pse_steps) st.l_pseudo /= static_cast<double>(pse_steps);

    if (!validation.empty()) {
      const auto vr = metrics::evaluate(val_y, probs_from_cache(backbone, model, val));
      st.validation_metric = selection_value(vr);
      if (st.validation_metric && (!best || *st.validation_metric > *best)) {
        best = st.validation_metric;
        rep.selected_epoch = e;
        std::copy(model.params().begin(), model.params().end(), best_params.begin());
      }
    }
    rep.epochs.push_back(st);
  }

  if (best) {
    std::copy(best_params.begin(), best_params.end(), model.mutable_params().begin());
  } else {
    rep.selected_epoch = E - 1;
    rep.warnings.push_back("validation metric undefined at every epoch; keeping the last epoch");
  }
  if (!validation.empty()) rep.validation = metrics::evaluate(val_y, probs_from_cache(backbone, model, val));

  const auto& test = cohort.test();
  if (!test.empty()) {
    const Cached te = cache_features(cfg, backbone, model, stage1.tpn, stage1.bank, test);
    rep.test = metrics::evaluate(labels_of(test), probs_from_cache(backbone, model, te));
  }
  rep.backbone_digest_after = backbone.digest();
  rep.stage2_seconds = seconds_since(t0);
  return {std::move(model), std::move(rep)};
}

std::string RunReport::to_json(bool timings) const {
  json j;
  j["variant"] = variant;
  j["seed"] = seed;
  j["selection_metric"] = selection_metric;
  j["selected_epoch"] = selected_epoch;
  auto ep = json::array();
  for (const auto& e : epochs)
    ep.push_back({{"epoch", e.epoch},
                  {"l_sup", e.l_sup},
                  {"l_pseudo", e.l_pseudo},
                  {"pseudo_samples", e.pseudo_samples},
                  {"learning_rate", e.learning_rate},
                  {"validation_metric", opt_json(e.validation_metric)}});
  j["epochs"] = ep;
  j["validation"] = report_json(validation);
  j["test"] = report_json(test);
  j["manifest"] = {{"size", manifest.size},
                   {"selected", manifest.selected},
                   {"coverage", manifest.coverage},
                   {"selected_kappa", opt_json(manifest.selected_kappa)},
                   {"selected_accuracy", opt_json(manifest.selected_accuracy)}};
  j["trainable_ratio"] = trainable_ratio;
  j["backbone_digest_before"] = digest_hex(backbone_digest_before);
  j["backbone_digest_after"] = digest_hex(backbone_digest_after);
  if (timings) j["timings"] = {{"stage1_seconds", stage1_seconds}, {"stage2_seconds", stage2_seconds}};
  j["warnings"] = warnings;
  return j.dump(2);
}

std::vector<Variant> default_variants() {
  std::vector<Variant> v;
  v.push_back({"scope", {}, false, false, false});
  v.push_back({"frozen_head_only", {}, true, true, false});
  v.push_back({"supervised_adapter", {}, false, true, false});
  v.push_back({"naive_self_training", {}, false, false, true});
  AblationFlags f;
  f.etf_off = true;
  v.push_back({"etf_off", f, false, false, false});
  f = {};
  f.sinkhorn_off = true;
  v.push_back({"sinkhorn_off", f, false, false, false});
  f = {};
  f.confidence_weights_off = true;
  v.push_back({"confidence_weights_off", f, false, false, false});
  f = {};
  f.prototype_conditioning_off = true;
  v.push_back({"prototype_conditioning_off", f, false, false, false});
  return v;
}

ScopeConfig apply_variant(ScopeConfig cfg, const Variant& v) {
  auto& a = cfg.ablation;
  a.etf_off |= v.flags.etf_off;
  a.sinkhorn_off |= v.flags.sinkhorn_off;
  a.confidence_weights_off |= v.flags.confidence_weights_off;
  a.prototype_conditioning_off |= v.flags.prototype_conditioning_off;
  a.adapter_off |= v.flags.adapter_off || v.head_only;
  if (v.supervised_only) {
    cfg.train.warmup_epochs = cfg.train.epochs;
    if (cfg.train.strategy == Strategy::no_warmup || cfg.train.strategy == Strategy::two_stage)
      cfg.train.strategy = Strategy::interleaved;
  }
  if (v.naive) {
    a.sinkhorn_off = true;
    a.confidence_weights_off = true;
    cfg.fusion.rho = 0.0;
  }
  return cfg;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

const VariantSummary* ExperimentReport::summary(const std::string& name) const {
  for (const auto& s : summaries)
    if (s.name == name) return &s;
  return nullptr;
}

std::optional<double> ExperimentReport::mean_spearman() const {
  std::vector<double> v;
  for (const auto& q : quality)
    if (q.spearman) v.push_back(*q.spearman);
  if (v.empty()) return std::nullopt;
  return mean_std(v).first;
}

namespace {

struct SeedOutcome {
  std::vector<RunReport> runs;
  std::optional<SeedQuality> quality;
  std::vector<std::string> failures;
};

SeedOutcome run_seed(const ScopeConfig& cfg, const data::Cohort& cohort, const std::vector<Variant>& variants,
                     std::uint64_t seed) {
  SeedOutcome out;
  const data::TrackedCohort tracked(cohort);
  std::map<std::pair<bool, bool>, Stage1Result> stage1_cache;
  for (const auto& v : variants) {
    try {
      const ScopeConfig vc = apply_variant(cfg, v);
      const auto key = std::make_pair(vc.ablation.etf_off, vc.ablation.sinkhorn_off);
      auto it = stage1_cache.find(key);
      if (it == stage1_cache.end()) {
        ScopeConfig s1 = vc;
        s1.fusion.rho = cfg.fusion.rho;
        it = stage1_cache.emplace(key, run_stage1(s1, tracked, seed)).first;
      }
      Stage1Result s1 = it->second;
      if (vc.fusion.rho != cfg.fusion.rho) s1.manifest = fusion::reselect(std::move(s1.manifest), vc.fusion.rho);
      Stage2Result s2 = run_stage2(vc, tracked, s1, seed);
      s2.report.variant = v.name;
      out.runs.push_back(std::move(s2.report));
    } catch (const Error& e) {
      out.failures.push_back(v.name + "/" + std::to_string(seed) + ": " + e.what());
    }
  }
  const auto base = stage1_cache.find({cfg.ablation.etf_off, cfg.ablation.sinkhorn_off});
  if (base != stage1_cache.end() && !base->second.manifest.empty()) {
    SeedQuality q;
    q.seed = seed;
    const auto grid = metrics::default_rho_grid();
    q.rows = metrics::pseudo_quality_report(base->second.manifest, tracked.unlabeled_truth(), cohort.num_classes, grid);
    std::vector<double> rho, kappa;
    for (std::size_t i = 0; i < q.rows.size(); ++i) {
      if (i > 0 && q.rows[i].coverage > q.rows[i - 1].coverage) q.coverage_non_increasing = false;
      if (q.rows[i].kappa) {
        rho.push_back(q.rows[i].rho);
        kappa.push_back(*q.rows[i].kappa);
      }
    }
    try {
      q.spearman = metrics::spearman(rho, kappa);
    } catch (const UndefinedMetricError&) {
    }
    out.quality = std::move(q);
  }
  return out;
}

}  // namespace

ExperimentReport run_experiment_matrix(const ScopeConfig& cfg, const data::Cohort& cohort,
                                       const std::vector<Variant>& variants, std::size_t threads) {
  const auto t0 = Clock::now();
  if (cfg.seeds.empty()) throw ConfigError("experiment matrix needs at least one seed");
  ExperimentReport rep;
  rep.seeds = cfg.seeds;
  std::vector<SeedOutcome> outcomes(cfg.seeds.size());

  if (threads == 0) threads = 1;
  threads = std::min(threads, cfg.seeds.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) outcomes[i] = run_seed(cfg, cohort, variants, cfg.seeds[i]);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(mu);
            if (next >= cfg.seeds.size()) return;
            i = next++;
          }
          outcomes[i] = run_seed(cfg, cohort, variants, cfg.seeds[i]);
        }
      });
    for (auto& th : pool) th.join();
  }

  for (auto& o : outcomes) {
    for (auto& r : o.runs) rep.runs.push_back(std::move(r));
    for (auto& f : o.failures) rep.failures.push_back(std::move(f));
    if (o.quality) rep.quality.push_back(std::move(*o.quality));
  }
  if (!rep.failures.empty())
    rep.warnings.push_back(std::to_string(rep.failures.size()) + " run(s) failed; aggregates use completed seeds");

  for (const auto& v : variants) {
    VariantSummary s;
    s.name = v.name;
    for (const auto& r : rep.runs) {
      if (r.variant != v.name || r.test.samples == 0) continue;
      s.kappa.push_back(r.test.kappa.value_or(0.0));
      s.weighted_f1.push_back(r.test.weighted_f1);
      s.accuracy.push_back(r.test.accuracy);
      if (r.test.auroc) s.auroc.push_back(*r.test.auroc);
    }
    std::tie(s.kappa_mean, s.kappa_std) = mean_std(s.kappa);
    std::tie(s.f1_mean, s.f1_std) = mean_std(s.weighted_f1);
    std::tie(s.accuracy_mean, s.accuracy_std) = mean_std(s.accuracy);
    if (!s.auroc.empty()) {
      const auto [m, sd] = mean_std(s.auroc);
      s.auroc_mean = m;
      s.auroc_std = sd;
    }
    rep.summaries.push_back(std::move(s));
  }

  if (const auto* full = rep.summary("scope")) {
    for (const char* name : {"etf_off", "sinkhorn_off", "confidence_weights_off", "prototype_conditioning_off"})
      if (const auto* s = rep.summary(name); s && !s->kappa.empty() && s->kappa_mean > full->kappa_mean)
        rep.inversions.push_back(std::string(name) + " mean kappa " + fmt(s->kappa_mean) + " > scope " +
                                 fmt(full->kappa_mean));
  }
  rep.seconds = seconds_since(t0);
  return rep;
}

std::string ExperimentReport::to_json(bool timings) const {
  json j;
  j["seeds"] = seeds;
  auto sums = json::array();
  for (const auto& s : summaries)
    sums.push_back({{"variant", s.name},
                    {"completed_seeds", s.kappa.size()},
                    {"kappa", s.kappa},
                    {"kappa_mean", s.kappa_mean},
                    {"kappa_std", s.kappa_std},
                    {"weighted_f1_mean", s.f1_mean},
                    {"weighted_f1_std", s.f1_std},
                    {"accuracy_mean", s.accuracy_mean},
                    {"accuracy_std", s.accuracy_std},
                    {"auroc_mean", opt_json(s.auroc_mean)},
                    {"auroc_std", opt_json(s.auroc_std)}});
  j["summaries"] = sums;
  auto qual = json::array();
  for (const auto& q : quality) {
    auto rows = json::array();
    for (const auto& r : q.rows)
      rows.push_back({{"rho", r.rho},
                      {"selected", r.selected},
                      {"coverage", r.coverage},
                      {"kappa", opt_json(r.kappa)},
                      {"weighted_f1", opt_json(r.weighted_f1)},
                      {"per_class_f1", r.per_class_f1}});
    qual.push_back({{"seed", q.seed},
                    {"spearman_rho_kappa", opt_json(q.spearman)},
                    {"coverage_non_increasing", q.coverage_non_increasing},
                    {"rows", rows}});
  }
  j["pseudo_quality"] = qual;
  j["mean_spearman_rho_kappa"] = opt_json(mean_spearman());
  j["inversions"] = inversions;
  j["failures"] = failures;
  j["warnings"] = warnings;
  if (timings) j["seconds"] = seconds;
  auto runs_json = json::array();
  for (const auto& r : runs) runs_json.push_back(json::parse(r.to_json(timings)));
  j["runs"] = runs_json;
  return j.dump(2);
}

std::string ExperimentReport::seeds_csv(const std::string& variant) const {
  std::ostringstream os;
  os << "seed,kappa,weighted_f1,accuracy,auroc\n";
  std::vector<double> k, f, a, au;
  for (const auto& r : runs) {
    if (r.variant != variant || r.test.samples == 0) continue;
    const double kv = r.test.kappa.value_or(0.0);
    k.push_back(kv);
    f.push_back(r.test.weighted_f1);
    a.push_back(r.test.accuracy);
    if (r.test.auroc) au.push_back(*r.test.auroc);
    os << r.seed << ',' << fmt(kv) << ',' << fmt(r.test.weighted_f1) << ',' << fmt(r.test.accuracy) << ','
       << fmt_opt(r.test.auroc) << '\n';
  }
  const auto mk = mean_std(k), mf = mean_std(f), ma = mean_std(a), mau = mean_std(au);
  os << "mean," << fmt(mk.first) << ',' << fmt(mf.first) << ',' << fmt(ma.first) << ','
     << (au.empty() ? "" : fmt(mau.first)) << '\n';
  os << "std," << fmt(mk.second) << ',' << fmt(mf.second) << ',' << fmt(ma.second) << ','
     << (au.empty() ? "" : fmt(mau.second)) << '\n';
  return os.str();
}

std::string ExperimentReport::comparison_csv() const {
  std::ostringstream os;
  os << "variant,seeds,kappa_mean,kappa_std,weighted_f1_mean,weighted_f1_std,accuracy_mean,accuracy_std,"
        "auroc_mean,auroc_std,delta_kappa_vs_scope\n";
  const auto* full = summary("scope");
  for (const auto& s : summaries) {
    os << s.name << ',' << s.kappa.size() << ',' << fmt(s.kappa_mean) << ',' << fmt(s.kappa_std) << ','
       << fmt(s.f1_mean) << ',' << fmt(s.f1_std) << ',' << fmt(s.accuracy_mean) << ',' << fmt(s.accuracy_std) << ','
       << fmt_opt(s.auroc_mean) << ',' << fmt_opt(s.auroc_std) << ',';
    if (full) os << fmt(s.kappa_mean - full->kappa_mean);
    os << '\n';
  }
  return os.str();
}

}  // namespace scope::pipeline
