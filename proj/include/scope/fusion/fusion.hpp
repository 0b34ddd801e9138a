#pragma once

// Dempster-Shafer fusion of the prior and prototype predictions into
// confidence-scored pseudo-labels.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scope/core/matrix.hpp"
#include "scope/core/numeric.hpp"

namespace scope::fusion {

// Masses over K singleton hypotheses.
using Bba = Vector;

// Denominator floor below which two sources are in total conflict.
inline constexpr double kConflictFloor = 1e-12;

Bba bba_from_logits(std::span<const double> logits);

// Singleton closed form m_c = m1_c m2_c / sum_j m1_j m2_j.
// ConflictError when the sum is below kConflictFloor.
Bba ds_combine(std::span<const double> m1, std::span<const double> m2);

// General Dempster rule over focal sets (bitmasks over the frame), applied to
// the singleton BBAs: products accumulate on intersections, the empty-set
// mass is the conflict, the rest is renormalised by 1 - conflict.
Bba ds_combine_bruteforce(std::span<const double> m1, std::span<const double> m2);

// 1 - H(m) / ln K with 0 ln 0 = 0, clamped to [0, 1]. ContractError for K < 2.
double entropy_confidence(std::span<const double> m);

struct PseudoRecord {
  std::size_t index = 0;
  std::int32_t y_prior = 0;
  std::int32_t y_proto = 0;
  bool agree = false;
  double gamma = 0.0;
  bool selected = false;
  // Empty when the two sources were in total conflict.
  Bba fused_masses;

  friend bool operator==(const PseudoRecord&, const PseudoRecord&) = default;
};

struct FusionOptions {
  double rho = 0.5;
  // Divides the prototype class logits before the softmax.
  double proto_temperature = 1.0;
};

// prior_logits and proto_logits are N x K with aligned rows; the labels are
// the respective argmax predictions. Selection is agree && gamma > rho.
// Totally conflicting samples get gamma 0 and are never selected.
std::vector<PseudoRecord> build_pseudo_manifest(const Matrix& prior_logits,
                                                std::span<const std::int32_t> prior_labels,
                                                const Matrix& proto_logits,
                                                std::span<const std::int32_t> proto_labels,
                                                const FusionOptions& opts = {});

// Recomputes the selection flags for another threshold.
std::vector<PseudoRecord> reselect(std::vector<PseudoRecord> records, double rho);
double coverage(const std::vector<PseudoRecord>& records);

std::string manifest_to_jsonl(const std::vector<PseudoRecord>& records);
std::vector<PseudoRecord> manifest_from_jsonl(const std::string& text);
void write_manifest(const std::vector<PseudoRecord>& records, const std::filesystem::path& path);
std::vector<PseudoRecord> read_manifest(const std::filesystem::path& path);

}  // namespace scope::fusion
