#pragma once

// Frozen toy backbone with prototype-conditioned modulation adapters.
//
// Features are token-major T x D matrices (row t is the D-vector of token t).
// The input x (C x T_in, channel-major) is cut into T = T_in / patch tokens;
// token t holds the C * patch values of its time window, projected to D and
// offset by a fixed positional vector. Layer l maps
//
//   h_{l+1} = h_l + r_l,   r_l = W2 silu(W1 h_l + b1) + b2   (per token)
//
// and the adapted layers (the last L) replace r_l by modulate(r_l, varpi).
// The head averages h_N over tokens and applies a D -> K linear map.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scope/core/matrix.hpp"
#include "scope/core/numeric.hpp"

namespace scope::adapter {

struct BackboneConfig {
  std::size_t channels = 4;
  std::size_t time_points = 16;
  std::size_t patch = 8;
  std::size_t width = 16;    // D
  std::size_t hidden = 128;  // per-layer expansion
  std::size_t depth = 20;    // N
  double bias_scale = 0.1;   // biases and positional vectors; 0 gives a zero-bias backbone
  double residual_scale = 0.5;  // W2 entries ~ N(0, residual_scale^2 / (hidden * depth))
  std::uint64_t seed = 1234;

  std::size_t input_dim() const noexcept { return channels * time_points; }
  std::size_t tokens() const noexcept { return patch ? time_points / patch : 0; }
  void validate() const;
};

struct BranchTrace {
  Matrix pre;  // T x hidden, W1 h + b1
  Matrix act;  // T x hidden, silu(pre)
};

// Parameters are fixed at construction; there is no mutating API.
class FrozenBackbone {
 public:
  explicit FrozenBackbone(const BackboneConfig& cfg);

  const BackboneConfig& config() const noexcept { return cfg_; }
  std::size_t width() const noexcept { return cfg_.width; }
  std::size_t depth() const noexcept { return cfg_.depth; }
  std::size_t tokens() const noexcept { return cfg_.tokens(); }
  std::size_t parameter_count() const noexcept { return params_.size(); }
  std::uint64_t digest() const noexcept;

  // h_0 (T x D). DimensionError on a feature length mismatch.
  Matrix embed(std::span<const double> x) const;
  // r_l for layer l given h_l; the trace is filled when non-null.
  Matrix branch(std::size_t layer, const Matrix& h, BranchTrace* trace = nullptr) const;
  // Adds (dr/dh)^T dr to dh.
  void branch_backward(std::size_t layer, const BranchTrace& trace, const Matrix& dr, Matrix& dh) const;
  // h_0 .. h_N.
  std::vector<Matrix> forward_all(std::span<const double> x) const;
  // h_upto after running layers [0, upto) unmodified.
  Matrix forward_to(std::span<const double> x, std::size_t upto) const;

 private:
  struct LayerOffsets {
    std::size_t w1, b1, w2, b2;
  };
  BackboneConfig cfg_;
  std::vector<double> params_;
  std::size_t embed_w_ = 0, embed_b_ = 0, pos_ = 0;
  std::vector<LayerOffsets> layers_;
};

struct AdapterConfig {
  std::size_t depth = 3;        // L
  double lambda = 0.1;          // bound on the scale: alpha in [1 - lambda, 1 + lambda]
  double lambda_proto = 1.0;    // bound on the prototype-branch output
  void validate() const;
  friend bool operator==(const AdapterConfig&, const AdapterConfig&) = default;
};

// Offsets of one adapter layer inside a flat parameter block.
//   self:  W_s (2D x 2D), b_s (2D)     -> [d_alpha0; beta0]
//   proto: W_p (2D x K),  b_p (2D)     -> lambda_proto * tanh(.)
//   gate:  w_g (K),       b_g (1)      -> sigmoid(.)
struct AdapterLayerLayout {
  std::size_t D = 0, K = 0;
  std::size_t w_self = 0, b_self = 0, w_proto = 0, b_proto = 0, w_gate = 0, b_gate = 0, size = 0;
  AdapterLayerLayout(std::size_t width, std::size_t classes);
  friend bool operator==(const AdapterLayerLayout&, const AdapterLayerLayout&) = default;
};

struct ModTrace {
  Vector mean, stddev;        // D each
  Vector u;                   // self branch, 2D
  Vector v_pre, v;            // proto branch before/after lambda_proto * tanh, 2D
  double gate_pre = 0.0, gate = 0.0;
  Vector d_alpha, alpha, beta;  // D each
};

// Feature-wise modulation of r (T x D) by varpi (K). params points at one
// adapter layer laid out as AdapterLayerLayout. ContractError when T = 0.
Matrix modulate(const Matrix& r, std::span<const double> varpi, std::span<const double> params,
                const AdapterLayerLayout& layout, const AdapterConfig& cfg, ModTrace* trace = nullptr);
// Given d(out), accumulates parameter gradients into grad (same layout as
// params) and returns d(r).
Matrix modulate_backward(const Matrix& r, std::span<const double> varpi, std::span<const double> params,
                         const AdapterLayerLayout& layout, const AdapterConfig& cfg, const ModTrace& trace,
                         const Matrix& dout, std::span<double> grad);

// Trainable stage-II parameters: L adapter layers followed by the head
// (W_h K x D, b_h K), in one flat vector.
class AdapterModel {
 public:
  AdapterModel() = default;
  AdapterModel(const AdapterConfig& cfg, std::size_t width, std::size_t classes);

  // Zero self/proto branches and gate (identity at init), head ~ N(0, 1/D).
  static AdapterModel initialize(const AdapterConfig& cfg, std::size_t width, std::size_t classes,
                                 std::uint64_t seed);

  const AdapterConfig& config() const noexcept { return cfg_; }
  std::size_t width() const noexcept { return D_; }
  std::size_t num_classes() const noexcept { return K_; }
  const AdapterLayerLayout& layer_layout() const noexcept { return layer_; }
  std::size_t head_offset() const noexcept { return cfg_.depth * layer_.size; }
  std::size_t adapter_parameter_count() const noexcept { return head_offset(); }

  std::span<const double> params() const noexcept { return params_; }
  std::span<double> mutable_params() noexcept { return params_; }
  std::span<const double> layer_params(std::size_t i) const {
    return std::span<const double>(params_).subspan(i * layer_.size, layer_.size);
  }

  friend bool operator==(const AdapterModel&, const AdapterModel&) = default;

 private:
  AdapterConfig cfg_;
  std::size_t D_ = 0, K_ = 0;
  AdapterLayerLayout layer_{0, 0};
  Vector params_;
};

// Runs the frozen layers below the adapters: h_{N-L}. Cache this per sample;
// it never changes during stage II.
Matrix lower_features(const FrozenBackbone& backbone, const AdapterModel& model, std::span<const double> x);

// Logits from cached lower features.
Vector adapted_logits(const FrozenBackbone& backbone, const AdapterModel& model, const Matrix& lower,
                      std::span<const double> varpi);
// Full path from the raw sample.
Vector adapted_forward(const FrozenBackbone& backbone, const AdapterModel& model, std::span<const double> x,
                       std::span<const double> varpi);
// Frozen backbone + head only (adapters bypassed).
Vector frozen_logits(const FrozenBackbone& backbone, const AdapterModel& model, std::span<const double> x);

struct LossItem {
  const Matrix* lower = nullptr;
  std::span<const double> varpi;
  std::int32_t label = 0;
  double weight = 0.0;
};

// sum_i weight_i * CE(logits_i, label_i); grad is overwritten when non-null.
double adapter_loss_and_grad(const FrozenBackbone& backbone, const AdapterModel& model,
                             std::span<const LossItem> items, Vector* grad);

// trainable / (trainable + backbone).
double trainable_ratio(const FrozenBackbone& backbone, const AdapterModel& model);

// Checkpoint "SCOPEADA" v1: config echo, adapter config, D, K, parameters.
std::vector<std::uint8_t> encode_adapter(const AdapterModel& model, const std::string& config_echo);
AdapterModel decode_adapter(std::span<const std::uint8_t> bytes);
void save_adapter(const AdapterModel& model, const std::filesystem::path& path,
                  const std::string& config_echo = "{}");
AdapterModel load_adapter(const std::filesystem::path& path);

}  // namespace scope::adapter
