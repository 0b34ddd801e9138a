#include "scope/core/optimizer.hpp"

#include <cmath>

#include "scope/core/error.hpp"

namespace scope {

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adamw") return OptimizerKind::adamw;
  throw ConfigError("unknown optimizer \"" + std::string(name) + "\" (expected sgd|adamw)");
}

std::string_view optimizer_name(OptimizerKind kind) noexcept {
  return kind == OptimizerKind::sgd ? "sgd" : "adamw";
}

double cosine_lr(double base, double min_lr, std::size_t step, std::size_t total) {
  if (total <= 1) return base;
  const double pi = std::acos(-1.0);
  const double t = static_cast<double>(step) / static_cast<double>(total - 1);
  return min_lr + 0.5 * (base - min_lr) * (1.0 + std::cos(pi * t));
}

Optimizer::Optimizer(OptimizerConfig cfg, std::size_t n) : cfg_(cfg) {
  if (cfg_.kind == OptimizerKind::adamw) {
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
  }
}

void Optimizer::step(std::span<double> params, std::span<const double> grad) {
  step(params, grad, {});
}

void Optimizer::step(std::span<double> params, std::span<const double> grad,
                     std::span<const unsigned char> decay_mask) {
  if (params.size() != grad.size()) throw DimensionError("Optimizer::step: size mismatch");
  if (!decay_mask.empty() && decay_mask.size() != params.size())
    throw DimensionError("Optimizer::step: decay mask size mismatch");
  ++t_;
  const double lr = cfg_.learning_rate;
  const auto decays = [&](std::size_t i) { return decay_mask.empty() || decay_mask[i] != 0; };

  if (cfg_.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double wd = decays(i) ? cfg_.weight_decay : 0.0;
      params[i] -= lr * (grad[i] + wd * params[i]);
    }
    return;
  }

  if (m_.size() != params.size()) throw DimensionError("Optimizer::step: state size mismatch");
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (decays(i)) params[i] -= lr * cfg_.weight_decay * params[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
  }
}

}  // namespace scope
