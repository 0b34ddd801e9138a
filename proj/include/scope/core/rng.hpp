#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace scope {

// xoshiro256** seeded through splitmix64. Every draw (uniforms, normals,
// integers, shuffles) is implemented here so sequences do not depend on the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  // Named sub-stream: an independent generator derived from (seed, name).
  static Rng derive(std::uint64_t seed, std::string_view name);
  Rng fork(std::string_view name) const { return derive(seed_, name); }

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;
  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n); n must be > 0. Unbiased (rejection).
  std::uint64_t below(std::uint64_t n) noexcept;
  // Standard normal via Box-Muller; pairs are cached.
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
  // Index drawn proportionally to non-negative weights (sum must be > 0).
  std::size_t categorical(std::span<const double> weights) noexcept;

  template <typename T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;
std::uint64_t fnv1a64(std::string_view s) noexcept;

}  // namespace scope
