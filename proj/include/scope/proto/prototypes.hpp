#pragma once

// Balanced prototype bank over frozen TPN embeddings: k-means initialisation
// per prior class, Sinkhorn-balanced refinement on labelled data, and
// prototype predictions.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scope/core/matrix.hpp"
#include "scope/core/numeric.hpp"
#include "scope/core/optimizer.hpp"
#include "scope/core/rng.hpp"

namespace scope::proto {

struct PrototypeBank {
  std::size_t num_classes = 0;
  std::size_t per_class = 0;  // M
  std::size_t dim = 0;
  double epsilon = 0.05;
  double tau = 10.0;
  // (K*M) x d, prototype (k, m) in row k*M + m; rows are unit norm.
  Matrix prototypes;

  std::span<const double> at(std::size_t k, std::size_t m) const {
    return prototypes.row(k * per_class + m);
  }
  // DimensionError on a shape mismatch, NumericError on a non-unit row.
  void validate(double tol = 1e-9) const;
  void renormalize();

  friend bool operator==(const PrototypeBank&, const PrototypeBank&) = default;
};

// Log-domain Sinkhorn-Knopp from log Q = S / eps. Each iteration rescales
// columns to sum B/M and then rows to sum 1, so rows are exact on return.
// NumericError on non-finite S; ContractError on bad sizes or eps <= 0.
Matrix sinkhorn_assign(const Matrix& s, double epsilon, std::size_t iters);
// Row-wise softmax(S / eps): the assignment used when Sinkhorn is disabled.
Matrix row_softmax_assign(const Matrix& s, double epsilon);

struct KMeansResult {
  Matrix centroids;  // k x d
  std::vector<std::size_t> assignment;
  double inertia = 0.0;
  std::size_t iterations = 0;
};

// Lloyd's algorithm with k-means++ seeding, best of `restarts` by inertia
// (first run wins ties). Requires points.rows() >= k >= 1.
KMeansResult kmeans(const Matrix& points, std::size_t k, Rng& rng, std::size_t restarts = 10,
                    std::size_t max_iter = 200);

struct InitOptions {
  std::size_t restarts = 10;
  std::size_t max_per_class = 5000;
  double jitter = 1e-3;
};

// Per predicted class, k-means with k = M over that class's embeddings and
// normalised centroids. Classes with fewer than M points duplicate centroids
// with seeded jitter; empty classes get random unit vectors. Fallbacks are
// appended to warnings when given.
PrototypeBank init_prototypes_kmeans(const Matrix& embeddings, std::span<const std::int32_t> prior_labels,
                                     std::size_t num_classes, std::size_t per_class, std::uint64_t seed,
                                     const InitOptions& opts = {},
                                     std::vector<std::string>* warnings = nullptr);

// Cosine similarities between the rows of emb (B x d) and class k's prototypes.
Matrix class_similarity(const Matrix& emb, const PrototypeBank& bank, std::size_t k);

struct RefineConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer{OptimizerKind::adamw, 1e-3, 0.0};
  std::size_t sinkhorn_iters = 3;
  double epsilon = 0.05;
  double tau = 10.0;
  double uniform_mix = 0.05;
  bool use_sinkhorn = true;
  std::uint64_t seed = 1;

  void validate() const;
};

// Stop-gradient targets for L_P: for every class present in the batch, the
// batch rows of that class and the assignment of S^(k) (Sinkhorn, or row
// softmax when disabled) mixed as (1 - uniform_mix) q + uniform_mix / M.
struct PrototypeTargets {
  std::vector<std::vector<std::size_t>> rows;  // per class
  std::vector<Matrix> q;                       // per class, rows.size() x M
};
PrototypeTargets prototype_targets(const PrototypeBank& bank, const Matrix& emb,
                                   std::span<const std::int32_t> labels,
                                   std::span<const std::size_t> batch, const RefineConfig& cfg);

// L_P against fixed targets: cross-entropy of softmax(tau * s) per sample,
// mean within each class, then mean over classes present. grad (same shape
// as bank.prototypes) is overwritten when non-null.
double prototype_loss(const PrototypeBank& bank, const Matrix& emb, const PrototypeTargets& targets,
                      double tau, Matrix* grad);

// Targets from the current bank, then the loss.
double prototype_loss_and_grad(const PrototypeBank& bank, const Matrix& emb,
                               std::span<const std::int32_t> labels,
                               std::span<const std::size_t> batch, const RefineConfig& cfg,
                               Matrix* grad);

struct RefineLog {
  std::vector<double> epoch_loss;
  std::string to_json() const;
};

PrototypeBank refine_prototypes(PrototypeBank bank, const Matrix& emb,
                                std::span<const std::int32_t> labels, const RefineConfig& cfg,
                                RefineLog* log = nullptr);

struct ProtoPrediction {
  std::int32_t label = 0;
  Vector class_logits;   // varpi_k = max_m s_(k,m)
  Vector similarities;   // flat K*M, index k*M + m
};

// Argmax over all K*M similarities, ties to the lowest (k, m).
// NumericError on a zero-norm embedding.
ProtoPrediction proto_predict(std::span<const double> z, const PrototypeBank& bank);

// Checkpoint "SCOPEPRO" v1.
std::vector<std::uint8_t> encode_bank(const PrototypeBank& bank);
PrototypeBank decode_bank(std::span<const std::uint8_t> bytes);
void save_bank(const PrototypeBank& bank, const std::filesystem::path& path);
PrototypeBank load_bank(const std::filesystem::path& path);

}  // namespace scope::proto
