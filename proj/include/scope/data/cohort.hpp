#pragma once

// Synthetic subject-shifted cohorts.
//
// Every sample is a C x T grid (flattened row-major, channel-major) drawn as
//
//   x = separation * class_signal[k] + mode_spread * mode_signal[k][m]
//       + subject_shift * subject_signal[s] + noise * N(0, I)
//
// where all signals are smooth random multi-sinusoid patterns normalised to
// unit RMS per entry. Classes follow the configured imbalance weights and
// modes are uniform within a class. Splits use disjoint subjects.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scope/core/numeric.hpp"

namespace scope::data {

struct Sample {
  Vector features;
  std::uint32_t subject_id = 0;
  // -1 in the label-stripped unlabeled split.
  std::int32_t label = -1;

  friend bool operator==(const Sample&, const Sample&) = default;
};

enum class Split { labeled, unlabeled, validation, test };
std::string_view split_name(Split split) noexcept;
Split parse_split(std::string_view name);

struct CohortConfig {
  std::size_t num_classes = 5;
  std::size_t modes_per_class = 2;
  std::size_t channels = 4;
  std::size_t time_points = 16;
  std::size_t labeled_subjects = 4;
  std::size_t unlabeled_subjects = 12;
  std::size_t validation_subjects = 4;
  std::size_t test_subjects = 8;
  std::size_t samples_per_subject = 40;
  double class_separation = 0.35;
  double mode_spread = 0.3;
  double subject_shift = 0.6;
  double noise = 1.0;
  // Empty means uniform; otherwise one weight per class, summing to 1.
  std::vector<double> class_weights = {0.35, 0.25, 0.2, 0.12, 0.08};
  std::uint64_t seed = 7;

  std::size_t feature_dim() const noexcept { return channels * time_points; }
  std::vector<double> effective_weights() const;
  // Throws ConfigError naming the offending field.
  void validate() const;
};

struct Cohort {
  std::size_t num_classes = 0;
  std::size_t channels = 0;
  std::size_t time_points = 0;
  std::vector<Sample> labeled;
  // Labels stripped (-1). True labels live in unlabeled_truth, which only
  // evaluation/report code reads.
  std::vector<Sample> unlabeled;
  std::vector<Sample> validation;
  std::vector<Sample> test;
  std::vector<std::int32_t> unlabeled_truth;

  std::size_t feature_dim() const noexcept { return channels * time_points; }
  const std::vector<Sample>& split(Split s) const;
  // Sorted distinct subject ids of one split.
  std::vector<std::uint32_t> subjects(Split s) const;

  friend bool operator==(const Cohort&, const Cohort&) = default;
};

Cohort generate_cohort(const CohortConfig& cfg);

// Binary container (magic "SCOPEDAT") plus a JSON manifest next to it with the
// header fields (same stem, ".json" extension).
void write_cohort(const Cohort& cohort, const std::filesystem::path& path);
Cohort read_cohort(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_cohort(const Cohort& cohort);
Cohort decode_cohort(std::span<const std::uint8_t> bytes);
std::filesystem::path manifest_path_for(const std::filesystem::path& path);

// Read-access counting wrapper. Pipelines take one of these so tests can
// assert which splits a stage touched.
class TrackedCohort {
 public:
  explicit TrackedCohort(Cohort cohort) : cohort_(std::move(cohort)) {}

  std::size_t num_classes() const noexcept { return cohort_.num_classes; }
  std::size_t channels() const noexcept { return cohort_.channels; }
  std::size_t time_points() const noexcept { return cohort_.time_points; }
  std::size_t feature_dim() const noexcept { return cohort_.feature_dim(); }

  const std::vector<Sample>& labeled() const { return touch(Split::labeled); }
  const std::vector<Sample>& unlabeled() const { return touch(Split::unlabeled); }
  const std::vector<Sample>& validation() const { return touch(Split::validation); }
  const std::vector<Sample>& test() const { return touch(Split::test); }
  const std::vector<std::int32_t>& unlabeled_truth() const {
    truth_reads_.fetch_add(1, std::memory_order_relaxed);
    return cohort_.unlabeled_truth;
  }

  std::size_t reads(Split s) const noexcept {
    return reads_[static_cast<int>(s)].load(std::memory_order_relaxed);
  }
  std::size_t truth_reads() const noexcept { return truth_reads_.load(std::memory_order_relaxed); }

 private:
  const std::vector<Sample>& touch(Split s) const {
    reads_[static_cast<int>(s)].fetch_add(1, std::memory_order_relaxed);
    return cohort_.split(s);
  }

  Cohort cohort_;
  mutable std::atomic<std::size_t> reads_[4] = {0, 0, 0, 0};
  mutable std::atomic<std::size_t> truth_reads_{0};
};

}  // namespace scope::data
