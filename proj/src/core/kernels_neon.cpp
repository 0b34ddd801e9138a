// aarch64 only: NEON is part of the base ISA there, so no runtime probe is
// needed beyond compiling this file.

#include "scope/core/kernels.hpp"

#include <arm_neon.h>

namespace scope::kernels {
namespace {

double dot_neon(const double* x, const double* y, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(x + i), vld1q_f64(y + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
  }
  double s = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_neon(double a, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void gemv_neon(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y,
               bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double v = dot_neon(a + r * cols, x, cols);
    y[r] = accumulate ? y[r] + v : v;
  }
}

void gemv_t_neon(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y,
                 bool accumulate) {
  if (!accumulate)
    for (std::size_t c = 0; c < cols; ++c) y[c] = 0.0;
  for (std::size_t r = 0; r < rows; ++r) axpy_neon(x[r], a + r * cols, y, cols);
}

void ger_neon(double alpha, const double* x, const double* y, double* a, std::size_t rows,
              std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy_neon(alpha * x[r], y, a + r * cols, cols);
}

}  // namespace

namespace detail {
const KernelTable* neon_table() noexcept {
  static const KernelTable table{Isa::neon, dot_neon,    axpy_neon,
                                 gemv_neon, gemv_t_neon, ger_neon};
  return &table;
}
}  // namespace detail

}  // namespace scope::kernels
