#include "scope/core/kernels.hpp"

namespace scope::kernels {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void gemv_scalar(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y,
                 bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double v = dot_scalar(a + r * cols, x, cols);
    y[r] = accumulate ? y[r] + v : v;
  }
}

void gemv_t_scalar(const double* a, std::size_t rows, std::size_t cols, const double* x,
                   double* y, bool accumulate) {
  if (!accumulate)
    for (std::size_t c = 0; c < cols; ++c) y[c] = 0.0;
  for (std::size_t r = 0; r < rows; ++r) axpy_scalar(x[r], a + r * cols, y, cols);
}

void ger_scalar(double alpha, const double* x, const double* y, double* a, std::size_t rows,
                std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy_scalar(alpha * x[r], y, a + r * cols, cols);
}

}  // namespace

const KernelTable& scalar_table() noexcept {
  static const KernelTable table{Isa::scalar, dot_scalar,    axpy_scalar,
                                 gemv_scalar, gemv_t_scalar, ger_scalar};
  return table;
}

}  // namespace scope::kernels
