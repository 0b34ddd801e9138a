#pragma once

// Dense double-precision inner-loop kernels.
//
// Each kernel has a scalar reference implementation plus optional SIMD
// variants (AVX2+FMA on x86-64, NEON on aarch64). The variant is picked once at
// startup from what the CPU reports; the SCOPE_ISA environment variable
// ("scalar", "avx2", "neon") overrides the choice. SIMD variants reassociate
// sums, so results agree with the scalar reference to rounding, not bit for
// bit. Within one process the choice is fixed, so runs stay reproducible.

#include <cstddef>
#include <span>
#include <string_view>

namespace scope {
class Matrix;
}

namespace scope::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa) noexcept;

struct KernelTable {
  Isa isa;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // y = A x (+ y when accumulate), A is rows x cols row-major
  void (*gemv)(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y,
               bool accumulate);
  // y = A^T x (+ y when accumulate), A is rows x cols row-major, y has cols entries
  void (*gemv_t)(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y,
                 bool accumulate);
  // A += alpha * x y^T, A is rows x cols row-major
  void (*ger)(double alpha, const double* x, const double* y, double* a, std::size_t rows,
              std::size_t cols);
};

// The scalar table always exists; SIMD tables exist only when compiled in and
// supported by the running CPU.
const KernelTable& scalar_table() noexcept;
const KernelTable* table_for(Isa isa) noexcept;
bool isa_available(Isa isa) noexcept;

const KernelTable& active() noexcept;
Isa active_isa() noexcept;
// Switch the process-wide kernel table; returns false if unavailable.
bool set_active_isa(Isa isa) noexcept;

// Span conveniences over the active table.
double dot(std::span<const double> x, std::span<const double> y);
void axpy(double a, std::span<const double> x, std::span<double> y);
// y = A x
void gemv(const Matrix& a, std::span<const double> x, std::span<double> y, bool accumulate = false);
// y = A^T x
void gemv_t(const Matrix& a, std::span<const double> x, std::span<double> y,
            bool accumulate = false);
void ger(double alpha, std::span<const double> x, std::span<const double> y, Matrix& a);

namespace detail {
const KernelTable* avx2_table() noexcept;
const KernelTable* neon_table() noexcept;
}  // namespace detail

}  // namespace scope::kernels
