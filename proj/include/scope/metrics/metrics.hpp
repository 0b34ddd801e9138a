#pragma once

// Classification metrics and pseudo-label quality reports.
//
// Undefined cases (single-class truth for AUROC, no positives for AUPRC,
// p_e = 1 for kappa, constant input for Spearman) throw UndefinedMetricError.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scope/core/matrix.hpp"
#include "scope/core/numeric.hpp"
#include "scope/fusion/fusion.hpp"

namespace scope::metrics {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = 0);
  static ConfusionMatrix from_predictions(std::span<const std::int32_t> truth,
                                          std::span<const std::int32_t> predicted, std::size_t num_classes);
  // Row-major counts; DimensionError unless counts.size() == K * K.
  static ConfusionMatrix from_counts(std::size_t num_classes, std::vector<std::uint64_t> counts);

  void add(std::int32_t truth, std::int32_t predicted, std::uint64_t n = 1);
  std::size_t num_classes() const noexcept { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
  std::uint64_t total() const noexcept;
  std::uint64_t row_sum(std::size_t k) const;
  std::uint64_t col_sum(std::size_t k) const;
  std::uint64_t trace() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_ = 0;
  std::vector<std::uint64_t> counts_;
};

double accuracy(const ConfusionMatrix& cm);
// (p_o - p_e) / (1 - p_e).
double cohen_kappa(const ConfusionMatrix& cm);
// Per class 2PR / (P + R), 0 when both are 0 (or the class never occurs).
Vector per_class_f1(const ConfusionMatrix& cm);
// Per-class F1 weighted by true-class support.
double weighted_f1(const ConfusionMatrix& cm);

struct ScoredPredictions {
  Vector scores;                     // positive-class score
  std::vector<std::int32_t> labels;  // 0 or 1
};

// P(score_pos > score_neg) + 0.5 P(tie).
double auroc(const ScoredPredictions& p);
// Area under the ROC polyline (one vertex per distinct score), by trapezoids.
double auroc_trapezoid(const ScoredPredictions& p);
// sum_n (R_n - R_{n-1}) P_n over descending distinct-score thresholds.
double auprc(const ScoredPredictions& p);

// Ranks 1..n, ties get the average rank.
Vector average_ranks(std::span<const double> v);
double spearman(std::span<const double> x, std::span<const double> y);

struct ClassificationReport {
  std::size_t num_classes = 0;
  std::size_t samples = 0;
  double accuracy = 0.0;
  std::optional<double> kappa;
  double weighted_f1 = 0.0;
  Vector per_class_f1;
  std::optional<double> auroc;  // K = 2 only
  std::optional<double> auprc;  // K = 2 only
  ConfusionMatrix confusion;

  std::string to_json() const;
};

// Predictions are argmax of each row of probs (N x K). AUROC/AUPRC use the
// class-1 column when K = 2; undefined metrics are left empty.
ClassificationReport evaluate(std::span<const std::int32_t> truth, const Matrix& probs);

struct PseudoQualityRow {
  double rho = 0.0;
  std::size_t selected = 0;
  double coverage = 0.0;
  std::optional<double> kappa;
  std::optional<double> weighted_f1;
  Vector per_class_f1;  // empty when nothing is selected
};

// {0, 0.05, ..., 0.95}.
std::vector<double> default_rho_grid();

// Quality of the selected subset at each rho against the hidden labels.
std::vector<PseudoQualityRow> pseudo_quality_report(const std::vector<fusion::PseudoRecord>& records,
                                                    std::span<const std::int32_t> truth,
                                                    std::size_t num_classes, std::span<const double> rho_grid);

// Columns: rho,selected,coverage,kappa,weighted_f1,f1_class0..f1_class{K-1};
// undefined values are written as empty fields.
std::string pseudo_quality_csv(const std::vector<PseudoQualityRow>& rows, std::size_t num_classes);

}  // namespace scope::metrics
