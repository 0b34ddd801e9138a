#include "scope/tpn/etf.hpp"

#include <algorithm>
#include <cmath>

#include "scope/core/error.hpp"
#include "scope/core/kernels.hpp"

namespace scope::tpn {

Matrix etf_target(std::size_t num_classes) {
  if (num_classes < 2) throw ContractError("etf_target: need at least 2 classes");
  const double K = static_cast<double>(num_classes);
  Matrix t(num_classes, num_classes, -1.0 / (K - 1.0));
  for (std::size_t k = 0; k < num_classes; ++k) t(k, k) = K / (K - 1.0) - 1.0 / (K - 1.0);
  return t;
}

namespace {

// Columns of the head as unit vectors, stored as rows (K x d) for contiguous access.
Matrix unit_columns(const Matrix& head, std::vector<double>& norms) {
  const std::size_t d = head.rows();
  const std::size_t K = head.cols();
  Matrix u(K, d);
  norms.assign(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    double ss = 0.0;
    for (std::size_t i = 0; i < d; ++i) ss += head(i, k) * head(i, k);
    const double n = std::sqrt(ss);
    if (!(n > 0.0) || !std::isfinite(n))
      throw NumericError("ETF: head column " + std::to_string(k) + " has zero norm");
    norms[k] = n;
    for (std::size_t i = 0; i < d; ++i) u(k, i) = head(i, k) / n;
  }
  return u;
}

}  // namespace

Matrix normalized_gram(const Matrix& head) {
  std::vector<double> norms;
  const Matrix u = unit_columns(head, norms);
  const std::size_t K = head.cols();
  Matrix g(K, K);
  for (std::size_t a = 0; a < K; ++a)
    for (std::size_t b = 0; b < K; ++b) g(a, b) = kernels::dot(u.row(a), u.row(b));
  return g;
}

EtfLossGrad etf_loss_and_grad(const Matrix& head) {
  const std::size_t d = head.rows();
  const std::size_t K = head.cols();
  std::vector<double> norms;
  const Matrix u = unit_columns(head, norms);
  const Matrix target = etf_target(K);

  Matrix resid(K, K);
  double loss = 0.0;
  for (std::size_t a = 0; a < K; ++a) {
    for (std::size_t b = 0; b < K; ++b) {
      const double r = kernels::dot(u.row(a), u.row(b)) - target(a, b);
      resid(a, b) = r;
      loss += r * r;
    }
  }

  // dL/du_k = 4 sum_j R_kj u_j (R symmetric), then project out the radial
  // component and divide by the norm to go back through w_k / ||w_k||.
  EtfLossGrad out{loss, Matrix(d, K)};
  std::vector<double> gu(d);
  for (std::size_t k = 0; k < K; ++k) {
    std::fill(gu.begin(), gu.end(), 0.0);
    for (std::size_t j = 0; j < K; ++j) kernels::axpy(4.0 * resid(k, j), u.row(j), gu);
    const double radial = kernels::dot(gu, u.row(k));
    for (std::size_t i = 0; i < d; ++i) out.grad(i, k) = (gu[i] - radial * u(k, i)) / norms[k];
  }
  return out;
}

std::vector<double> pairwise_cosines(const Matrix& head) {
  const Matrix g = normalized_gram(head);
  std::vector<double> out;
  for (std::size_t a = 0; a < g.rows(); ++a)
    for (std::size_t b = a + 1; b < g.cols(); ++b) out.push_back(g(a, b));
  return out;
}

EtfDescent minimize_etf(Matrix head, std::size_t max_steps, double learning_rate, double tol) {
  EtfDescent out;
  auto renormalize = [](Matrix& w) {
    for (std::size_t k = 0; k < w.cols(); ++k) {
      double ss = 0.0;
      for (std::size_t i = 0; i < w.rows(); ++i) ss += w(i, k) * w(i, k);
      const double n = std::sqrt(ss);
      if (!(n > 0.0)) throw NumericError("ETF descent: column collapsed to zero");
      for (std::size_t i = 0; i < w.rows(); ++i) w(i, k) /= n;
    }
  };
  renormalize(head);
  for (; out.steps < max_steps; ++out.steps) {
    const EtfLossGrad e = etf_loss_and_grad(head);
    out.loss = e.loss;
    if (e.loss < tol) break;
    kernels::axpy(-learning_rate, e.grad.values(), head.values());
    renormalize(head);
    const auto cos = pairwise_cosines(head);
    out.max_cosine_trace.push_back(*std::max_element(cos.begin(), cos.end()));
  }
  out.loss = etf_loss_and_grad(head).loss;
  out.head = std::move(head);
  return out;
}

double rankin_bound(std::size_t num_classes) {
  if (num_classes < 2) throw ContractError("rankin_bound: need at least 2 classes");
  return -1.0 / (static_cast<double>(num_classes) - 1.0);
}

}  // namespace scope::tpn
