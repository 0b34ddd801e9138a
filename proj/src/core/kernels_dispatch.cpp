#include <atomic>
#include <cstdlib>
#include <string>

#include "scope/core/error.hpp"
#include "scope/core/kernels.hpp"
#include "scope/core/matrix.hpp"

namespace scope::kernels {

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

bool isa_available(Isa isa) noexcept { return table_for(isa) != nullptr; }

const KernelTable* table_for(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar: return &scalar_table();
    case Isa::avx2:
#if defined(SCOPE_KERNELS_AVX2)
      if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
        return detail::avx2_table();
#endif
      return nullptr;
    case Isa::neon:
#if defined(SCOPE_KERNELS_NEON)
      return detail::neon_table();
#else
      return nullptr;
#endif
  }
  return nullptr;
}

namespace {

const KernelTable* initial_table() noexcept {
  if (const char* env = std::getenv("SCOPE_ISA")) {
    const std::string_view want(env);
    for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon})
      if (want == isa_name(isa))
        if (const KernelTable* t = table_for(isa)) return t;
  }
  for (Isa isa : {Isa::avx2, Isa::neon})
    if (const KernelTable* t = table_for(isa)) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() noexcept {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& active() noexcept { return *current().load(std::memory_order_relaxed); }
Isa active_isa() noexcept { return active().isa; }

bool set_active_isa(Isa isa) noexcept {
  const KernelTable* t = table_for(isa);
  if (t == nullptr) return false;
  current().store(t, std::memory_order_relaxed);
  return true;
}

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("dot: length mismatch");
  return active().dot(x.data(), y.data(), x.size());
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
  active().axpy(a, x.data(), y.data(), x.size());
}

void gemv(const Matrix& a, std::span<const double> x, std::span<double> y, bool accumulate) {
  if (x.size() != a.cols() || y.size() != a.rows()) throw DimensionError("gemv: shape mismatch");
  active().gemv(a.values().data(), a.rows(), a.cols(), x.data(), y.data(), accumulate);
}

void gemv_t(const Matrix& a, std::span<const double> x, std::span<double> y, bool accumulate) {
  if (x.size() != a.rows() || y.size() != a.cols())
    throw DimensionError("gemv_t: shape mismatch");
  active().gemv_t(a.values().data(), a.rows(), a.cols(), x.data(), y.data(), accumulate);
}

void ger(double alpha, std::span<const double> x, std::span<const double> y, Matrix& a) {
  if (x.size() != a.rows() || y.size() != a.cols()) throw DimensionError("ger: shape mismatch");
  active().ger(alpha, x.data(), y.data(), a.values().data(), a.rows(), a.cols());
}

}  // namespace scope::kernels
