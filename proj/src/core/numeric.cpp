#include "scope/core/numeric.hpp"

#include <algorithm>
#include <cmath>

#include "scope/core/error.hpp"
#include "scope/core/kernels.hpp"

namespace scope {

Vector softmax(std::span<const double> v) {
  if (v.empty()) throw ContractError("softmax: empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw ContractError("log_sum_exp: empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  if (std::isinf(m)) return m;
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - m);
  return m + std::log(sum);
}

double l2_norm(std::span<const double> v) { return std::sqrt(kernels::dot(v, v)); }

Vector normalized(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("normalized: zero or non-finite norm");
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_similarity: length mismatch");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (!(na > 0.0) || !(nb > 0.0))
    throw NumericError("cosine_similarity: zero-norm input (degenerate embedding)");
  return std::clamp(kernels::dot(a, b) / (na * nb), -1.0, 1.0);
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw ContractError("argmax: empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

namespace {

double fd_coord(const ScalarFunction& f, Vector& probe, std::size_t i, double h) {
  const double orig = probe[i];
  probe[i] = orig + h;
  const double fp = f(probe);
  probe[i] = orig - h;
  const double fm = f(probe);
  probe[i] = orig;
  if (!std::isfinite(fp) || !std::isfinite(fm))
    throw NumericError("finite_diff_grad: non-finite function value at coordinate " +
                       std::to_string(i));
  return (fp - fm) / (2.0 * h);
}

}  // namespace

Vector finite_diff_grad(const ScalarFunction& f, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  Vector probe(x.begin(), x.end());
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = fd_coord(f, probe, i, h);
  return g;
}

Vector finite_diff_grad(const ScalarFunction& f, std::span<const double> x,
                        std::span<const std::size_t> coords, double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  Vector probe(x.begin(), x.end());
  Vector g(x.size(), 0.0);
  for (std::size_t i : coords) {
    if (i >= x.size()) throw DimensionError("finite_diff_grad: coordinate out of range");
    g[i] = fd_coord(f, probe, i, h);
  }
  return g;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw DimensionError("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    na = std::max(na, std::abs(a[i]));
    nb = std::max(nb, std::abs(b[i]));
  }
  return diff / std::max({na, nb, floor});
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace scope
