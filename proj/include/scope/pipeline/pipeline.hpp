#pragma once

// Stage I (task prior, prototypes, pseudo-label manifest) and stage II
// (adapter training on labelled plus selected pseudo-labelled samples), and
// the multi-seed experiment matrix with its baseline and ablation rows.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scope/adapter/adapter.hpp"
#include "scope/data/cohort.hpp"
#include "scope/fusion/fusion.hpp"
#include "scope/metrics/metrics.hpp"
#include "scope/pipeline/config.hpp"
#include "scope/proto/prototypes.hpp"
#include "scope/tpn/tpn.hpp"

namespace scope::pipeline {

// Config with the cohort's shape copied into the TPN and backbone.
ScopeConfig bind_to_cohort(ScopeConfig cfg, const data::TrackedCohort& cohort);

// Loads cfg.cohort_path, or generates from cfg.data when it is empty.
data::Cohort obtain_cohort(const ScopeConfig& cfg);

struct Stage1Result {
  tpn::TpnModel tpn;
  tpn::TpnTrainingLog tpn_log;
  proto::PrototypeBank bank;
  proto::RefineLog refine_log;
  std::vector<fusion::PseudoRecord> manifest;  // one record per unlabelled sample
  std::vector<std::string> warnings;
  double seconds = 0.0;
};

// The stage-I steps; run_stage1 composes them. All read only the labelled
// split and the label-stripped unlabelled split.
tpn::TpnModel train_prior(const ScopeConfig& cfg, const data::TrackedCohort& cohort, std::uint64_t seed,
                          tpn::TpnTrainingLog* log = nullptr);
// k-means on the unlabelled embeddings grouped by prior label, then refinement on the labelled embeddings.
proto::PrototypeBank build_bank(const ScopeConfig& cfg, const data::TrackedCohort& cohort, const tpn::TpnModel& tpn,
                                std::uint64_t seed, proto::RefineLog* log = nullptr,
                                std::vector<std::string>* warnings = nullptr);
std::vector<fusion::PseudoRecord> label_unlabeled(const ScopeConfig& cfg, const data::TrackedCohort& cohort,
                                                  const tpn::TpnModel& tpn, const proto::PrototypeBank& bank);


// Errors from the modules are rethrown with the failing step in the message.
Stage1Result run_stage1(const ScopeConfig& cfg, const data::TrackedCohort& cohort, std::uint64_t seed);

// Walks a fixed index set in shuffled passes; every index appears exactly
// once per pass and the order is redrawn at each wrap-around.
class CyclicSampler {
 public:
  CyclicSampler(std::vector<std::size_t> items, Rng rng);
  bool empty() const noexcept { return items_.empty(); }
  std::size_t size() const noexcept { return items_.size(); }
  std::size_t next();
  std::size_t cycles() const noexcept { return cycles_; }

 private:
  std::vector<std::size_t> items_;
  Rng rng_;
  std::size_t pos_ = 0;
  std::size_t cycles_ = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double l_sup = 0.0;     // mean over labelled steps
  double l_pseudo = 0.0;  // mean over pseudo steps (0 when none)
  std::size_t pseudo_samples = 0;
  double learning_rate = 0.0;
  std::optional<double> validation_metric;
};

struct ManifestSummary {
  std::size_t size = 0;
  std::size_t selected = 0;
  double coverage = 0.0;
  std::optional<double> selected_kappa;  // against the evaluation-only labels
  std::optional<double> selected_accuracy;
};

struct RunReport {
  std::string variant;
  std::uint64_t seed = 0;
  std::vector<EpochStats> epochs;
  std::string selection_metric;  // "kappa" or "auroc"
  std::size_t selected_epoch = 0;
  metrics::ClassificationReport validation;
  metrics::ClassificationReport test;
  ManifestSummary manifest;
  double trainable_ratio = 0.0;
  std::uint64_t backbone_digest_before = 0;
  std::uint64_t backbone_digest_after = 0;
  double stage1_seconds = 0.0;
  double stage2_seconds = 0.0;
  std::vector<std::string> warnings;

  // timings=false drops wall-clock fields so identical runs give identical text.
  std::string to_json(bool timings = true) const;
};

struct Stage2Result {
  adapter::AdapterModel model;
  RunReport report;
};

// Trains adapters + head from the stage-I artifacts. Validation and test
// splits are read only for the per-epoch selection metric and the final
// evaluation of the retained checkpoint.
Stage2Result run_stage2(const ScopeConfig& cfg, const data::TrackedCohort& cohort, const Stage1Result& stage1,
                        std::uint64_t seed);

// Metrics of a trained adapter on one split with labels (not the unlabelled one).
metrics::ClassificationReport evaluate_split(const ScopeConfig& cfg, const data::TrackedCohort& cohort,
                                             const tpn::TpnModel& tpn, const proto::PrototypeBank& bank,
                                             const adapter::AdapterModel& model, data::Split split);

// varpi (class-level prototype logits) for each sample, uniform 1/K when
// prototype conditioning is off.
Matrix conditioning_vectors(const ScopeConfig& cfg, const tpn::TpnModel& tpn, const proto::PrototypeBank& bank,
                            const std::vector<data::Sample>& samples);

// Softmax probabilities of the adapted model for each sample.
Matrix predict_probs(const adapter::FrozenBackbone& backbone, const adapter::AdapterModel& model,
                     const std::vector<data::Sample>& samples, const Matrix& varpi);

// Stage-II variants compared in the experiment matrix.
struct Variant {
  std::string name;
  // Applied on top of the base config.
  AblationFlags flags;
  bool head_only = false;        // adapters removed (L = 0)
  bool supervised_only = false;  // pseudo loss never applied
  bool naive = false;            // agreement-only labels: rho 0, gamma 1, sinkhorn off
};
std::vector<Variant> default_variants();
ScopeConfig apply_variant(ScopeConfig cfg, const Variant& v);

struct VariantSummary {
  std::string name;
  std::vector<double> kappa, weighted_f1, accuracy, auroc;  // per completed seed
  double kappa_mean = 0.0, kappa_std = 0.0;
  double f1_mean = 0.0, f1_std = 0.0;
  double accuracy_mean = 0.0, accuracy_std = 0.0;
  std::optional<double> auroc_mean, auroc_std;
};

struct SeedQuality {
  std::uint64_t seed = 0;
  std::vector<metrics::PseudoQualityRow> rows;
  std::optional<double> spearman;  // rho vs selected-subset kappa over rows with a defined kappa
  bool coverage_non_increasing = true;
};

struct ExperimentReport {
  std::vector<std::uint64_t> seeds;
  std::vector<RunReport> runs;
  std::vector<VariantSummary> summaries;
  std::vector<SeedQuality> quality;
  std::vector<std::string> failures;     // "variant/seed: message"
  std::vector<std::string> inversions;   // ablations scoring above the full method
  std::vector<std::string> warnings;
  double seconds = 0.0;

  const VariantSummary* summary(const std::string& name) const;
  std::optional<double> mean_spearman() const;
  std::string to_json(bool timings = true) const;
  // Per-seed rows of the full method plus mean and std footer rows.
  std::string seeds_csv(const std::string& variant = "scope") const;
  // One row per variant: mean/std of the test metrics.
  std::string comparison_csv() const;
};

// Runs every variant for every seed; stage I is shared between variants that
// configure it identically. Seed failures are recorded and skipped.
ExperimentReport run_experiment_matrix(const ScopeConfig& cfg, const data::Cohort& cohort,
                                       const std::vector<Variant>& variants, std::size_t threads = 0);

// Sample mean and standard deviation (n - 1 denominator, 0 for one value).
std::pair<double, double> mean_std(const std::vector<double>& v);

}  // namespace scope::pipeline
