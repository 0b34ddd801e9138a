#include "scope/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "scope/core/error.hpp"

namespace scope::metrics {

namespace {

void check_binary(const ScoredPredictions& p) {
  if (p.scores.size() != p.labels.size()) throw DimensionError("scores and labels differ in length");
  for (double s : p.scores)
    if (!std::isfinite(s)) throw NumericError("non-finite score");
  for (auto l : p.labels)
    if (l != 0 && l != 1) throw ContractError("binary labels must be 0 or 1");
}

// Indices sorted by descending score.
std::vector<std::size_t> descending(const Vector& s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return idx;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {}

ConfusionMatrix ConfusionMatrix::from_predictions(std::span<const std::int32_t> truth,
                                                  std::span<const std::int32_t> predicted,
                                                  std::size_t num_classes) {
  if (truth.size() != predicted.size()) throw DimensionError("truth and predictions differ in length");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

ConfusionMatrix ConfusionMatrix::from_counts(std::size_t num_classes, std::vector<std::uint64_t> counts) {
  if (counts.size() != num_classes * num_classes) throw DimensionError("confusion counts must be K x K");
  ConfusionMatrix cm(num_classes);
  cm.counts_ = std::move(counts);
  return cm;
}

void ConfusionMatrix::add(std::int32_t truth, std::int32_t predicted, std::uint64_t n) {
  if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= k_ ||
      static_cast<std::size_t>(predicted) >= k_)
    throw DimensionError("class index out of range: truth " + std::to_string(truth) + ", predicted " +
                         std::to_string(predicted));
  counts_[static_cast<std::size_t>(truth) * k_ + static_cast<std::size_t>(predicted)] += n;
}

std::uint64_t ConfusionMatrix::total() const noexcept {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t k) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < k_; ++j) s += at(k, j);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t k) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < k_; ++i) s += at(i, k);
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t k = 0; k < k_; ++k) s += at(k, k);
  return s;
}

double accuracy(const ConfusionMatrix& cm) {
  const auto n = cm.total();
  if (n == 0) throw UndefinedMetricError("accuracy of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(n);
}

double cohen_kappa(const ConfusionMatrix& cm) {
  const auto n = cm.total();
  if (n == 0) throw UndefinedMetricError("kappa of an empty confusion matrix");
  // Integer form: (n tr - sum r_k c_k) / (n^2 - sum r_k c_k).
  long double chance = 0.0L;
  for (std::size_t k = 0; k < cm.num_classes(); ++k)
    chance += static_cast<long double>(cm.row_sum(k)) * static_cast<long double>(cm.col_sum(k));
  const long double nn = static_cast<long double>(n) * static_cast<long double>(n);
  const long double denom = nn - chance;
  if (denom <= 0.0L) throw UndefinedMetricError("kappa undefined: chance agreement p_e = 1");
  return static_cast<double>((static_cast<long double>(n) * static_cast<long double>(cm.trace()) - chance) / denom);
}

Vector per_class_f1(const ConfusionMatrix& cm) {
  Vector f(cm.num_classes(), 0.0);
  for (std::size_t k = 0; k < cm.num_classes(); ++k) {
    // 2PR/(P+R) = 2 tp / (row + col).
    const auto tp = cm.at(k, k);
    const auto denom = cm.row_sum(k) + cm.col_sum(k);
    if (tp > 0) f[k] = 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return f;
}

double weighted_f1(const ConfusionMatrix& cm) {
  const auto n = cm.total();
  if (n == 0) throw UndefinedMetricError("weighted F1 of an empty confusion matrix");
  const Vector f = per_class_f1(cm);
  double s = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) s += static_cast<double>(cm.row_sum(k)) * f[k];
  return s / static_cast<double>(n);
}

double auroc(const ScoredPredictions& p) {
  check_binary(p);
  const auto idx = descending(p.scores);
  // Walk tie groups from the bottom; each positive beats every negative below it.
  double pos = 0, neg = 0, wins = 0.0;
  std::size_t i = idx.size();
  while (i > 0) {
    std::size_t j = i;
    double gp = 0, gn = 0;
    while (j > 0 && p.scores[idx[j - 1]] == p.scores[idx[i - 1]]) {
      (p.labels[idx[j - 1]] == 1 ? gp : gn) += 1;
      --j;
    }
    wins += gp * neg + 0.5 * gp * gn;
    pos += gp;
    neg += gn;
    i = j;
  }
  if (pos == 0 || neg == 0) throw UndefinedMetricError("AUROC needs at least one positive and one negative");
  return wins / (pos * neg);
}

double auroc_trapezoid(const ScoredPredictions& p) {
  check_binary(p);
  const auto idx = descending(p.scores);
  const double P = static_cast<double>(std::count(p.labels.begin(), p.labels.end(), 1));
  const double N = static_cast<double>(p.labels.size()) - P;
  if (P == 0 || N == 0) throw UndefinedMetricError("AUROC needs at least one positive and one negative");
  double tp = 0, fp = 0, area = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    const double ptp = tp, pfp = fp;
    std::size_t j = i;
    while (j < idx.size() && p.scores[idx[j]] == p.scores[idx[i]]) {
      (p.labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    area += (fp - pfp) / N * (tp + ptp) / (2.0 * P);
    i = j;
  }
  return area;
}

double auprc(const ScoredPredictions& p) {
  check_binary(p);
  const double P = static_cast<double>(std::count(p.labels.begin(), p.labels.end(), 1));
  if (P == 0) throw UndefinedMetricError("AUPRC needs at least one positive");
  const auto idx = descending(p.scores);
  double tp = 0, seen = 0, ap = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    const double ptp = tp;
    std::size_t j = i;
    while (j < idx.size() && p.scores[idx[j]] == p.scores[idx[i]]) {
      if (p.labels[idx[j]] == 1) tp += 1;
      seen += 1;
      ++j;
    }
    ap += (tp - ptp) / P * (tp / seen);
    i = j;
  }
  return ap;
}

Vector average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  Vector r(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of i+1 .. j
    for (std::size_t t = i; t < j; ++t) r[idx[t]] = rank;
    i = j;
  }
  return r;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("spearman: inputs differ in length");
  if (x.size() < 2) throw UndefinedMetricError("spearman needs at least two points");
  const Vector rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0 || syy == 0) throw UndefinedMetricError("spearman undefined for constant input");
  return sxy / std::sqrt(sxx * syy);
}

ClassificationReport evaluate(std::span<const std::int32_t> truth, const Matrix& probs) {
  if (truth.size() != probs.rows()) throw DimensionError("evaluate: truth and probabilities differ in length");
  if (truth.empty()) throw UndefinedMetricError("evaluate: no samples");
  const std::size_t K = probs.cols();
  ClassificationReport r;
  r.num_classes = K;
  r.samples = truth.size();
  std::vector<std::int32_t> pred(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) pred[i] = static_cast<std::int32_t>(argmax(probs.row(i)));
  r.confusion = ConfusionMatrix::from_predictions(truth, pred, K);
  r.accuracy = accuracy(r.confusion);
  try {
    r.kappa = cohen_kappa(r.confusion);
  } catch (const UndefinedMetricError&) {
  }
  r.weighted_f1 = weighted_f1(r.confusion);
  r.per_class_f1 = per_class_f1(r.confusion);
  if (K == 2) {
    ScoredPredictions sp;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      sp.scores.push_back(probs(i, 1));
      sp.labels.push_back(truth[i]);
    }
    try {
      r.auroc = auroc(sp);
    } catch (const UndefinedMetricError&) {
    }
    try {
      r.auprc = auprc(sp);
    } catch (const UndefinedMetricError&) {
    }
  }
  return r;
}

std::string ClassificationReport::to_json() const {
  nlohmann::ordered_json j;
  j["num_classes"] = num_classes;
  j["samples"] = samples;
  j["accuracy"] = accuracy;
  j["kappa"] = kappa ? nlohmann::ordered_json(*kappa) : nlohmann::ordered_json(nullptr);
  j["weighted_f1"] = weighted_f1;
  j["per_class_f1"] = per_class_f1;
  if (num_classes == 2) {
    j["auroc"] = auroc ? nlohmann::ordered_json(*auroc) : nlohmann::ordered_json(nullptr);
    j["auprc"] = auprc ? nlohmann::ordered_json(*auprc) : nlohmann::ordered_json(nullptr);
  }
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < confusion.num_classes(); ++t) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t p = 0; p < confusion.num_classes(); ++p) row.push_back(confusion.at(t, p));
    rows.push_back(row);
  }
  j["confusion"] = rows;
  return j.dump(2);
}

std::vector<double> default_rho_grid() {
  std::vector<double> g;
  for (int i = 0; i < 20; ++i) g.push_back(i / 20.0);
  return g;
}

std::vector<PseudoQualityRow> pseudo_quality_report(const std::vector<fusion::PseudoRecord>& records,
                                                    std::span<const std::int32_t> truth,
                                                    std::size_t num_classes, std::span<const double> rho_grid) {
  std::vector<PseudoQualityRow> rows;
  for (double rho : rho_grid) {
    PseudoQualityRow row;
    row.rho = rho;
    ConfusionMatrix cm(num_classes);
    for (const auto& r : records) {
      if (!(r.agree && !r.fused_masses.empty() && r.gamma > rho)) continue;
      if (r.index >= truth.size()) throw DimensionError("pseudo report: record index beyond the truth labels");
      cm.add(truth[r.index], r.y_prior);
      ++row.selected;
    }
    row.coverage = records.empty() ? 0.0 : static_cast<double>(row.selected) / static_cast<double>(records.size());
    if (row.selected > 0) {
      try {
        row.kappa = cohen_kappa(cm);
      } catch (const UndefinedMetricError&) {
      }
      row.weighted_f1 = weighted_f1(cm);
      row.per_class_f1 = per_class_f1(cm);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string pseudo_quality_csv(const std::vector<PseudoQualityRow>& rows, std::size_t num_classes) {
  std::ostringstream os;
  os << "rho,selected,coverage,kappa,weighted_f1";
  for (std::size_t k = 0; k < num_classes; ++k) os << ",f1_class" << k;
  os << '\n';
  for (const auto& r : rows) {
    os << fmt(r.rho) << ',' << r.selected << ',' << fmt(r.coverage) << ',';
    if (r.kappa) os << fmt(*r.kappa);
    os << ',';
    if (r.weighted_f1) os << fmt(*r.weighted_f1);
    for (std::size_t k = 0; k < num_classes; ++k) {
      os << ',';
      if (k < r.per_class_f1.size()) os << fmt(r.per_class_f1[k]);
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace scope::metrics
