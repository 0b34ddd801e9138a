#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scope {

enum class OptimizerKind { sgd, adamw };

OptimizerKind parse_optimizer_kind(std::string_view name);
std::string_view optimizer_name(OptimizerKind kind) noexcept;

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 0.01;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Cosine annealing from base to min_lr over `total` steps (step in [0, total)).
double cosine_lr(double base, double min_lr, std::size_t step, std::size_t total);

// First-order optimizer over a flat parameter vector.
//   sgd:   p -= lr * (g + wd * p)
//   adamw: decoupled decay p -= lr * wd * p, then the bias-corrected Adam step.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::size_t n);

  void step(std::span<double> params, std::span<const double> grad);
  // Same, but decay applies only where decay_mask is non-zero (biases, etc. excluded).
  void step(std::span<double> params, std::span<const double> grad,
            std::span<const unsigned char> decay_mask);

  const OptimizerConfig& config() const noexcept { return cfg_; }
  // For schedules; moment estimates are kept.
  void set_learning_rate(double lr) noexcept { cfg_.learning_rate = lr; }
  std::size_t steps() const noexcept { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

}  // namespace scope
