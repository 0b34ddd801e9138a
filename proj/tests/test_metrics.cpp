#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scope/core/error.hpp"
#include "scope/metrics/metrics.hpp"
#include "test_util.hpp"

using namespace scope;
using namespace scope::metrics;

namespace {

double pair_auroc(const ScoredPredictions& p) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < p.scores.size(); ++i)
    for (std::size_t j = 0; j < p.scores.size(); ++j) {
      if (p.labels[i] != 1 || p.labels[j] != 0) continue;
      pairs += 1;
      if (p.scores[i] > p.scores[j])
        wins += 1;
      else if (p.scores[i] == p.scores[j])
        wins += 0.5;
    }
  return wins / pairs;
}

// Distinct scores only: mean over positives of the precision at their rank.
double ap_by_rank(const ScoredPredictions& p) {
  double ap = 0, P = 0;
  for (std::size_t i = 0; i < p.scores.size(); ++i) {
    if (p.labels[i] != 1) continue;
    P += 1;
    double above = 0, pos_above = 0;
    for (std::size_t j = 0; j < p.scores.size(); ++j)
      if (p.scores[j] >= p.scores[i]) {
        above += 1;
        pos_above += p.labels[j];
      }
    ap += pos_above / above;
  }
  return ap / P;
}

double kappa_float(const std::vector<std::vector<double>>& cm) {
  double n = 0, tr = 0;
  const std::size_t K = cm.size();
  std::vector<double> r(K, 0), c(K, 0);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) {
      n += cm[i][j];
      r[i] += cm[i][j];
      c[j] += cm[i][j];
      if (i == j) tr += cm[i][j];
    }
  double pe = 0;
  for (std::size_t k = 0; k < K; ++k) pe += r[k] * c[k] / (n * n);
  const double po = tr / n;
  return (po - pe) / (1 - pe);
}

ScoredPredictions random_scored(Rng& rng, std::size_t n, bool ties) {
  ScoredPredictions p;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = ties ? std::floor(rng.uniform() * 5.0) / 5.0 : rng.uniform();
    p.scores.push_back(s);
    p.labels.push_back(rng.uniform() < 0.4 ? 1 : 0);
  }
  p.labels[0] = 1;
  p.labels[1] = 0;
  return p;
}

}  // namespace

TEST_CASE("kappa hand values") {
  CHECK(cohen_kappa(ConfusionMatrix::from_counts(2, {40, 10, 10, 40})) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(cohen_kappa(ConfusionMatrix::from_counts(3, {5, 0, 0, 0, 7, 0, 0, 0, 2})) == 1.0);
  CHECK(cohen_kappa(ConfusionMatrix::from_counts(2, {30, 0, 30, 0})) == 0.0);
  CHECK(accuracy(ConfusionMatrix::from_counts(2, {40, 10, 10, 40})) == doctest::Approx(0.8));
}

TEST_CASE("kappa undefined cases are signalled") {
  CHECK_THROWS_AS(cohen_kappa(ConfusionMatrix(3)), UndefinedMetricError);
  CHECK_THROWS_AS(cohen_kappa(ConfusionMatrix::from_counts(2, {10, 0, 0, 0})), UndefinedMetricError);
  CHECK_THROWS_AS(ConfusionMatrix::from_counts(2, {1, 2, 3}), DimensionError);
  ConfusionMatrix cm(2);
  CHECK_THROWS_AS(cm.add(2, 0), DimensionError);
}

TEST_CASE("kappa matches the float formula and is permutation invariant") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t K = 2 + rng.below(4);
    std::vector<std::uint64_t> counts(K * K);
    std::vector<std::vector<double>> f(K, std::vector<double>(K));
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j) {
        counts[i * K + j] = rng.below(30) + (i == j ? 10 : 0);
        f[i][j] = static_cast<double>(counts[i * K + j]);
      }
    const auto cm = ConfusionMatrix::from_counts(K, counts);
    const double k = cohen_kappa(cm);
    CHECK(std::abs(k - kappa_float(f)) < 1e-12);
    CHECK(k >= -1.0);
    CHECK(k <= 1.0);

    std::vector<std::size_t> perm(K);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    std::vector<std::uint64_t> pc(K * K);
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j) pc[perm[i] * K + perm[j]] = counts[i * K + j];
    CHECK(std::abs(cohen_kappa(ConfusionMatrix::from_counts(K, pc)) - k) < 1e-12);
    const double wf = weighted_f1(cm);
    CHECK(wf >= 0.0);
    CHECK(wf <= 1.0);
  }
}

TEST_CASE("permuted-label perfect prediction keeps kappa at 1") {
  const std::vector<std::int32_t> truth{0, 1, 2, 2, 1, 0, 0};
  std::vector<std::int32_t> pred;
  for (auto t : truth) pred.push_back(t);
  CHECK(cohen_kappa(ConfusionMatrix::from_predictions(truth, pred, 3)) == 1.0);
  std::vector<std::int32_t> relabelled_truth, relabelled_pred;
  const std::int32_t map[] = {2, 0, 1};
  for (auto t : truth) {
    relabelled_truth.push_back(map[t]);
    relabelled_pred.push_back(map[t]);
  }
  CHECK(cohen_kappa(ConfusionMatrix::from_predictions(relabelled_truth, relabelled_pred, 3)) == 1.0);
}

TEST_CASE("weighted F1 hand values") {
  CHECK(weighted_f1(ConfusionMatrix::from_counts(2, {40, 10, 10, 40})) == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(weighted_f1(ConfusionMatrix::from_counts(3, {3, 0, 0, 0, 4, 0, 0, 0, 9})) == 1.0);
  // Class 2 has no support and is never predicted.
  const auto cm = ConfusionMatrix::from_counts(3, {8, 2, 0, 1, 9, 0, 0, 0, 0});
  const Vector f = per_class_f1(cm);
  CHECK(f[2] == 0.0);
  const double expect = (10.0 * (16.0 / 19.0) + 10.0 * (18.0 / 21.0)) / 20.0;
  CHECK(weighted_f1(cm) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("weighted F1 equals plain F1 for balanced binary data") {
  // Balanced support; plain F1 here is the macro average of the two class F1s.
  const auto cm = ConfusionMatrix::from_counts(2, {35, 15, 5, 45});
  const double p1 = 45.0 / 60.0, r1 = 45.0 / 50.0;
  const double p0 = 35.0 / 40.0, r0 = 35.0 / 50.0;
  const double f1 = 2 * p1 * r1 / (p1 + r1), f0 = 2 * p0 * r0 / (p0 + r0);
  CHECK(weighted_f1(cm) == doctest::Approx(0.5 * (f0 + f1)).epsilon(1e-14));
}

TEST_CASE("AUROC hand values") {
  CHECK(auroc({{0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}}) == 0.75);
  CHECK(auroc({{0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}}) == 1.0);
  CHECK(auroc({{0.5, 0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1, 1}}) == 0.5);
  CHECK_THROWS_AS(auroc({{0.1, 0.2}, {1, 1}}), UndefinedMetricError);
  CHECK_THROWS_AS(auroc({{0.1, 0.2}, {0, 0}}), UndefinedMetricError);
  CHECK_THROWS_AS(auroc({{0.1, NAN}, {0, 1}}), NumericError);
}

TEST_CASE("AUROC: Mann-Whitney, pair enumeration and trapezoids agree") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_scored(rng, 5 + rng.below(60), trial % 2 == 0);
    const double a = auroc(p);
    CHECK(std::abs(a - pair_auroc(p)) < 1e-12);
    CHECK(std::abs(a - auroc_trapezoid(p)) < 1e-12);
    ScoredPredictions flipped = p;
    for (auto& l : flipped.labels) l = 1 - l;
    CHECK(std::abs(a + auroc(flipped) - 1.0) < 1e-12);
  }
}

TEST_CASE("AUPRC hand values") {
  CHECK(auprc({{0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}}) == 1.0);
  for (std::size_t n : {2u, 5u, 17u}) {
    ScoredPredictions p;
    for (std::size_t i = 0; i < n; ++i) {
      p.scores.push_back(static_cast<double>(n - i));
      p.labels.push_back(i + 1 == n ? 1 : 0);
    }
    CHECK(std::abs(auprc(p) - 1.0 / static_cast<double>(n)) < 1e-12);
  }
  CHECK(std::abs(auprc({{0.3, 0.3, 0.3, 0.3, 0.3}, {1, 0, 0, 1, 0}}) - 0.4) < 1e-12);
  CHECK_THROWS_AS(auprc({{0.1, 0.2}, {0, 0}}), UndefinedMetricError);
}

TEST_CASE("AUPRC matches rank precision without ties") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_scored(rng, 5 + rng.below(60), false);
    const double a = auprc(p);
    CHECK(std::abs(a - ap_by_rank(p)) < 1e-12);
    CHECK(a > 0.0);
    CHECK(a <= 1.0);
  }
}

TEST_CASE("average ranks and Spearman") {
  const Vector r = average_ranks(std::vector<double>{10, 20, 20, 5});
  CHECK(r == Vector{2.0, 3.5, 3.5, 1.0});
  const Vector x{1, 2, 3, 4, 5};
  CHECK(spearman(x, Vector{2, 4, 6, 8, 100}) == doctest::Approx(1.0));
  CHECK(spearman(x, Vector{5, 4, 3, 2, 1}) == doctest::Approx(-1.0));
  // Pearson on ranks with ties, by hand: ranks y = [1.5,1.5,3,4,5].
  CHECK(spearman(x, Vector{1, 1, 2, 3, 4}) == doctest::Approx(0.9746794344808963).epsilon(1e-12));
  CHECK_THROWS_AS(spearman(x, Vector{1, 1, 1, 1, 1}), UndefinedMetricError);
}

TEST_CASE("evaluate builds a consistent report") {
  Matrix probs(4, 2, {0.9, 0.1, 0.6, 0.4, 0.65, 0.35, 0.2, 0.8});
  const std::vector<std::int32_t> truth{0, 0, 1, 1};
  const auto r = evaluate(truth, probs);
  CHECK(r.samples == 4);
  CHECK(r.accuracy == 0.75);
  REQUIRE(r.auroc);
  CHECK(*r.auroc == 0.75);
  REQUIRE(r.kappa);
  CHECK(*r.kappa == doctest::Approx(0.5));
  CHECK(r.to_json().find("\"auroc\"") != std::string::npos);

  Matrix one(2, 2, {0.9, 0.1, 0.8, 0.2});
  const auto u = evaluate(std::vector<std::int32_t>{0, 0}, one);
  CHECK_FALSE(u.kappa);
  CHECK_FALSE(u.auroc);
}

TEST_CASE("pseudo quality report: coverage, thresholds and CSV") {
  std::vector<fusion::PseudoRecord> recs;
  Rng rng(4);
  std::vector<std::int32_t> truth;
  for (std::size_t i = 0; i < 200; ++i) {
    fusion::PseudoRecord r;
    r.index = i;
    r.y_prior = static_cast<std::int32_t>(rng.below(3));
    r.agree = rng.uniform() < 0.7;
    r.y_proto = r.agree ? r.y_prior : (r.y_prior + 1) % 3;
    r.gamma = rng.uniform();
    r.fused_masses = {0.2, 0.3, 0.5};
    recs.push_back(r);
    truth.push_back(rng.uniform() < r.gamma ? r.y_prior : static_cast<std::int32_t>(rng.below(3)));
  }
  const auto grid = default_rho_grid();
  REQUIRE(grid.size() == 20);
  CHECK(grid[19] == doctest::Approx(0.95));
  const auto rows = pseudo_quality_report(recs, truth, 3, grid);
  const double agree_rate =
      static_cast<double>(std::count_if(recs.begin(), recs.end(), [](const auto& r) { return r.agree; })) / 200.0;
  CHECK(rows[0].coverage == doctest::Approx(agree_rate));
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].coverage <= rows[i - 1].coverage);

  const double gmax = std::max_element(recs.begin(), recs.end(), [](auto& a, auto& b) { return a.gamma < b.gamma; })->gamma;
  const auto top = pseudo_quality_report(recs, truth, 3, std::vector<double>{gmax});
  CHECK(top[0].coverage == 0.0);
  CHECK_FALSE(top[0].kappa);

  const std::string csv = pseudo_quality_csv(top, 3);
  CHECK(csv.rfind("rho,selected,coverage,kappa,weighted_f1,f1_class0,f1_class1,f1_class2\n", 0) == 0);
  CHECK(csv.find(",0,0,,,,,") != std::string::npos);
}
