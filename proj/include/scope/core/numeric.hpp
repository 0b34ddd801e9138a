#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace scope {

using Vector = std::vector<double>;

// Max-shifted softmax. Throws ContractError on empty input.
Vector softmax(std::span<const double> v);
// ln(sum exp v_i), overflow-free. Throws ContractError on empty input.
double log_sum_exp(std::span<const double> v);

double l2_norm(std::span<const double> v);
// v / ||v||; throws NumericError on a zero vector.
Vector normalized(std::span<const double> v);

// a.b / (|a||b|) clamped to [-1, 1]. Zero-norm input is a degenerate embedding
// and throws NumericError; a length mismatch throws DimensionError.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> v);

using ScalarFunction = std::function<double(std::span<const double>)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Vector finite_diff_grad(const ScalarFunction& f, std::span<const double> x, double h = 1e-5);
// Same, restricted to the listed coordinates (others reported as 0).
Vector finite_diff_grad(const ScalarFunction& f, std::span<const double> x,
                        std::span<const std::size_t> coords, double h = 1e-5);

// Norm-wise relative error ||a - b||_inf / max(||a||_inf, ||b||_inf, floor).
double relative_error(std::span<const double> a, std::span<const double> b,
                      double floor = 1e-12);

bool all_finite(std::span<const double> v);

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace scope

