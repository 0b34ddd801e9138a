#pragma once

// Task-prior network: a small EEGNet-style encoder f(x) -> z in R^d and a
// bias-free linear head s = W^T z.
//
// Conv mode, for an input of C channels x T time points:
//   temporal conv    F1 filters, kernel k1, same padding, no bias
//   depthwise spatial  F1*D filters spanning all C channels, bias, ELU
//   average pool     p1
//   depthwise temporal conv kernel k2, same padding, no bias
//   pointwise        F2 filters, bias, ELU
//   average pool     p2
//   flatten          d = F2 * T / (p1 * p2)
// MLP mode: z = ELU(A x + b) with d = mlp_hidden.
//
// Inputs are standardised per feature with statistics of the labelled split,
// stored in the model, so encode() never depends on the batch.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scope/core/matrix.hpp"
#include "scope/core/numeric.hpp"
#include "scope/core/optimizer.hpp"
#include "scope/core/rng.hpp"
#include "scope/data/cohort.hpp"

namespace scope::tpn {

enum class EncoderMode { conv, mlp };
std::string_view encoder_mode_name(EncoderMode m) noexcept;
EncoderMode parse_encoder_mode(std::string_view name);

struct TpnArch {
  EncoderMode mode = EncoderMode::conv;
  std::size_t channels = 4;
  std::size_t time_points = 16;
  std::size_t num_classes = 5;
  std::size_t temporal_filters = 4;   // F1
  std::size_t depth_multiplier = 2;   // D
  std::size_t separable_filters = 8;  // F2
  std::size_t temporal_kernel = 5;    // k1, odd
  std::size_t separable_kernel = 3;   // k2, odd
  std::size_t pool1 = 2;
  std::size_t pool2 = 2;
  std::size_t mlp_hidden = 32;

  std::size_t input_dim() const noexcept { return channels * time_points; }
  std::size_t embedding_dim() const noexcept;
  // Throws ConfigError (bad shapes) or ContractError (d < K-1).
  void validate() const;
  friend bool operator==(const TpnArch&, const TpnArch&) = default;
};

// Offsets into the flat parameter vector.
struct TpnLayout {
  std::size_t temporal = 0, spatial = 0, spatial_bias = 0, depthwise = 0, pointwise = 0,
              pointwise_bias = 0;
  std::size_t mlp_weight = 0, mlp_bias = 0;
  std::size_t head = 0;  // d x K row-major, entry (i, k) at head + i*K + k
  std::size_t total = 0;

  static TpnLayout of(const TpnArch& arch);
  friend bool operator==(const TpnLayout&, const TpnLayout&) = default;
};

class TpnModel {
 public:
  TpnModel() = default;
  TpnModel(TpnArch arch, Vector params, Vector input_mean, Vector input_scale);

  // He-style random encoder weights, N(0, 1/d) head, identity input scaling.
  static TpnModel initialize(const TpnArch& arch, Rng& rng);
  static TpnModel zeros(const TpnArch& arch);

  const TpnArch& arch() const noexcept { return arch_; }
  const TpnLayout& layout() const noexcept { return layout_; }
  std::span<const double> params() const noexcept { return params_; }
  std::span<double> mutable_params() noexcept { return params_; }
  const Vector& input_mean() const noexcept { return mean_; }
  const Vector& input_scale() const noexcept { return scale_; }
  void set_input_normalization(Vector mean, Vector scale);

  std::size_t embedding_dim() const noexcept { return arch_.embedding_dim(); }
  std::size_t num_classes() const noexcept { return arch_.num_classes; }
  Matrix head() const;  // d x K
  void set_head(const Matrix& w);

  friend bool operator==(const TpnModel&, const TpnModel&) = default;

 private:
  TpnArch arch_;
  TpnLayout layout_;
  Vector params_;
  Vector mean_;
  Vector scale_;
};

// Embedding of one sample. DimensionError on a feature length mismatch.
Vector encode(const TpnModel& model, std::span<const double> x);
Matrix encode_batch(const TpnModel& model, const std::vector<data::Sample>& samples);

struct PriorPrediction {
  Matrix logits;                    // N x K, unnormalised
  std::vector<std::int32_t> labels;  // argmax, ties to the lowest class
  Matrix embeddings;                // N x d
};
PriorPrediction prior_predict(const TpnModel& model, const std::vector<data::Sample>& samples);
Vector logits_from_embedding(const TpnModel& model, std::span<const double> z);

struct TpnTrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  OptimizerConfig optimizer{OptimizerKind::sgd, 0.05, 1e-4};
  double etf_weight = 0.1;
  // Off by default for the TPN; see the decisions ledger.
  double label_smoothing = 0.0;
  bool etf_for_binary = false;
  std::uint64_t seed = 1;

  void validate() const;
};

struct LossTerms {
  double ce = 0.0;
  double etf = 0.0;
  std::size_t correct = 0;  // argmax hits in the batch
  double total() const noexcept { return ce + etf; }
};

// Mean cross-entropy over the batch (with optional label smoothing) plus
// etf_weight * L_ETF on the head. Accumulates d(loss)/d(params) into grad
// when non-null (grad is overwritten).
LossTerms tpn_loss_and_grad(const TpnModel& model, std::span<const Vector* const> inputs,
                            std::span<const std::int32_t> labels, double etf_weight,
                            double label_smoothing, Vector* grad);

struct EpochRecord {
  std::size_t epoch = 0;
  double ce = 0.0;
  double etf = 0.0;
  double train_accuracy = 0.0;
};

struct TpnTrainingLog {
  std::vector<EpochRecord> epochs;
  std::vector<std::string> warnings;
  std::string to_json() const;
};

// Standardises inputs with labelled statistics, then runs mini-batch descent.
// NumericError (with epoch/batch) on a non-finite loss.
TpnModel train_tpn(const std::vector<data::Sample>& labeled, const TpnArch& arch,
                   const TpnTrainConfig& cfg, TpnTrainingLog* log = nullptr);

// Checkpoint: "SCOPETPN" v1, config echo (JSON text) + normalisation + params.
void save_tpn(const TpnModel& model, const std::filesystem::path& path,
              const std::string& config_echo = "{}");
TpnModel load_tpn(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_tpn(const TpnModel& model, const std::string& config_echo);
TpnModel decode_tpn(std::span<const std::uint8_t> bytes);

}  // namespace scope::tpn
