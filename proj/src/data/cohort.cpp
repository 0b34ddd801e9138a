#include "scope/data/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <json.hpp>

#include "scope/core/binary_io.hpp"
#include "scope/core/error.hpp"
#include "scope/core/rng.hpp"

namespace scope::data {

namespace {

constexpr std::string_view kMagic = "SCOPEDAT";
constexpr std::string_view kEvalMagic = "EVALONLY";
constexpr std::uint16_t kVersion = 1;

// Smooth C x T pattern: per channel a sum of three random sinusoids, then
// rescaled to unit RMS over all entries.
Vector smooth_signal(Rng& rng, std::size_t channels, std::size_t time_points) {
  Vector s(channels * time_points, 0.0);
  const double T = static_cast<double>(time_points);
  for (std::size_t c = 0; c < channels; ++c) {
    for (int q = 0; q < 3; ++q) {
      const double amp = rng.normal();
      const double freq = rng.uniform(0.5, 3.0);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t t = 0; t < time_points; ++t)
        s[c * time_points + t] +=
            amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(t) / T + phase);
    }
  }
  double ss = 0.0;
  for (double v : s) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(s.size()));
  if (rms > 0.0)
    for (double& v : s) v /= rms;
  return s;
}

std::vector<Sample>& mutable_split(Cohort& c, Split s) {
  switch (s) {
    case Split::labeled: return c.labeled;
    case Split::unlabeled: return c.unlabeled;
    case Split::validation: return c.validation;
    case Split::test: return c.test;
  }
  throw ContractError("bad split");
}

}  // namespace

std::string_view split_name(Split split) noexcept {
  switch (split) {
    case Split::labeled: return "labeled";
    case Split::unlabeled: return "unlabeled";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  for (Split s : {Split::labeled, Split::unlabeled, Split::validation, Split::test})
    if (split_name(s) == name) return s;
  throw ConfigError("unknown split \"" + std::string(name) +
                    "\" (expected labeled|unlabeled|validation|test)");
}

std::vector<double> CohortConfig::effective_weights() const {
  if (class_weights.empty()) return std::vector<double>(num_classes, 1.0 / num_classes);
  return class_weights;
}

void CohortConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("cohort config: ") + name + " must be positive");
  };
  positive(num_classes, "classes");
  positive(modes_per_class, "modes_per_class");
  positive(channels, "channels");
  positive(time_points, "time_points");
  positive(labeled_subjects, "labeled_subjects");
  positive(unlabeled_subjects, "unlabeled_subjects");
  positive(validation_subjects, "validation_subjects");
  positive(test_subjects, "test_subjects");
  positive(samples_per_subject, "samples_per_subject");
  if (!(noise >= 0.0) || !(class_separation >= 0.0) || !(subject_shift >= 0.0) ||
      !(mode_spread >= 0.0))
    throw ConfigError("cohort config: scales must be non-negative");
  if (!class_weights.empty()) {
    if (class_weights.size() != num_classes)
      throw ConfigError("cohort config: class_weights needs one entry per class");
    double sum = 0.0;
    for (double w : class_weights) {
      if (!(w >= 0.0)) throw ConfigError("cohort config: class_weights must be non-negative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("cohort config: class_weights must sum to 1");
  }
}

const std::vector<Sample>& Cohort::split(Split s) const {
  switch (s) {
    case Split::labeled: return labeled;
    case Split::unlabeled: return unlabeled;
    case Split::validation: return validation;
    case Split::test: return test;
  }
  throw ContractError("Cohort::split: bad split");
}

std::vector<std::uint32_t> Cohort::subjects(Split s) const {
  std::set<std::uint32_t> ids;
  for (const auto& sample : split(s)) ids.insert(sample.subject_id);
  return {ids.begin(), ids.end()};
}

Cohort generate_cohort(const CohortConfig& cfg) {
  cfg.validate();
  Rng signals = Rng::derive(cfg.seed, "data/signals");
  Rng draws = Rng::derive(cfg.seed, "data/samples");

  const std::size_t K = cfg.num_classes;
  const std::size_t C = cfg.channels;
  const std::size_t T = cfg.time_points;
  const std::size_t F = C * T;

  std::vector<Vector> class_signal(K);
  for (auto& s : class_signal) s = smooth_signal(signals, C, T);
  std::vector<std::vector<Vector>> mode_mean(K);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t m = 0; m < cfg.modes_per_class; ++m) {
      Vector mode = smooth_signal(signals, C, T);
      Vector mean(F);
      for (std::size_t i = 0; i < F; ++i)
        mean[i] = cfg.class_separation * class_signal[k][i] + cfg.mode_spread * mode[i];
      mode_mean[k].push_back(std::move(mean));
    }
  }

  const auto weights = cfg.effective_weights();
  Cohort cohort;
  cohort.num_classes = K;
  cohort.channels = C;
  cohort.time_points = T;

  std::uint32_t next_subject = 0;
  auto fill_split = [&](std::vector<Sample>& out, std::size_t n_subjects, bool strip) {
    for (std::size_t s = 0; s < n_subjects; ++s) {
      const std::uint32_t subject = next_subject++;
      const Vector offset = smooth_signal(signals, C, T);
      for (std::size_t j = 0; j < cfg.samples_per_subject; ++j) {
        const std::size_t k = draws.categorical(weights);
        const std::size_t m = static_cast<std::size_t>(draws.below(cfg.modes_per_class));
        Sample sample;
        sample.subject_id = subject;
        sample.features.resize(F);
        for (std::size_t i = 0; i < F; ++i)
          sample.features[i] =
              mode_mean[k][m][i] + cfg.subject_shift * offset[i] + cfg.noise * draws.normal();
        if (strip) {
          sample.label = -1;
          cohort.unlabeled_truth.push_back(static_cast<std::int32_t>(k));
        } else {
          sample.label = static_cast<std::int32_t>(k);
        }
        out.push_back(std::move(sample));
      }
    }
  };
  fill_split(cohort.labeled, cfg.labeled_subjects, false);
  fill_split(cohort.unlabeled, cfg.unlabeled_subjects, true);
  fill_split(cohort.validation, cfg.validation_subjects, false);
  fill_split(cohort.test, cfg.test_subjects, false);
  return cohort;
}

std::vector<std::uint8_t> encode_cohort(const Cohort& cohort) {
  io::ByteWriter w;
  io::write_header(w, kMagic, kVersion);
  w.u32(static_cast<std::uint32_t>(cohort.num_classes));
  w.u32(static_cast<std::uint32_t>(cohort.channels));
  w.u32(static_cast<std::uint32_t>(cohort.time_points));
  for (Split s : {Split::labeled, Split::unlabeled, Split::validation, Split::test})
    w.u32(static_cast<std::uint32_t>(cohort.split(s).size()));
  const std::size_t F = cohort.feature_dim();
  for (Split s : {Split::labeled, Split::unlabeled, Split::validation, Split::test}) {
    for (const auto& sample : cohort.split(s)) {
      if (sample.features.size() != F) throw DimensionError("encode_cohort: feature length mismatch");
      w.u32(sample.subject_id);
      w.i32(sample.label);
      w.f64_array(sample.features);
    }
  }
  w.bytes(kEvalMagic);
  w.u32(static_cast<std::uint32_t>(cohort.unlabeled_truth.size()));
  for (auto y : cohort.unlabeled_truth) w.i32(y);
  return w.buffer();
}

Cohort decode_cohort(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  io::read_header(r, kMagic, kVersion);
  Cohort cohort;
  cohort.num_classes = r.u32();
  cohort.channels = r.u32();
  cohort.time_points = r.u32();
  std::uint32_t counts[4];
  for (auto& c : counts) c = r.u32();
  if (cohort.num_classes == 0 || cohort.channels == 0 || cohort.time_points == 0)
    throw DimensionError("cohort header: K, C and T must be positive");
  const std::size_t F = cohort.feature_dim();
  const auto K = static_cast<std::int32_t>(cohort.num_classes);

  int idx = 0;
  for (Split s : {Split::labeled, Split::unlabeled, Split::validation, Split::test}) {
    auto& out = mutable_split(cohort, s);
    // A corrupt count must not trigger a huge reserve; the per-record reads
    // report the exact truncation offset instead.
    if (counts[idx] <= r.remaining() / (8 + 8 * F)) out.reserve(counts[idx]);
    for (std::uint32_t i = 0; i < counts[idx]; ++i) {
      Sample sample;
      sample.subject_id = r.u32();
      const std::size_t label_offset = r.offset();
      sample.label = r.i32();
      const bool stripped = s == Split::unlabeled;
      if (stripped ? sample.label != -1 : (sample.label < 0 || sample.label >= K))
        throw DimensionError("cohort record label " + std::to_string(sample.label) +
                             " invalid for split " + std::string(split_name(s)) +
                             " at byte offset " + std::to_string(label_offset));
      sample.features = r.f64_array(F);
      out.push_back(std::move(sample));
    }
    ++idx;
  }
  if (r.remaining() < kEvalMagic.size())
    throw TruncationError("missing evaluation-only label section", r.offset());
  if (r.bytes(kEvalMagic.size()) != kEvalMagic)
    throw FormatError("bad evaluation section marker");
  const std::uint32_t n_truth = r.u32();
  if (n_truth != cohort.unlabeled.size())
    throw DimensionError("evaluation label count " + std::to_string(n_truth) +
                         " != unlabeled sample count " + std::to_string(cohort.unlabeled.size()));
  cohort.unlabeled_truth.reserve(n_truth);
  for (std::uint32_t i = 0; i < n_truth; ++i) {
    const auto y = r.i32();
    if (y < 0 || y >= K) throw DimensionError("evaluation label out of range");
    cohort.unlabeled_truth.push_back(y);
  }
  if (r.remaining() != 0)
    throw FormatError("trailing bytes after cohort payload at offset " +
                      std::to_string(r.offset()));

  // Splits must not share subjects.
  std::set<std::uint32_t> seen;
  for (Split s : {Split::labeled, Split::unlabeled, Split::validation, Split::test}) {
    for (auto id : cohort.subjects(s))
      if (!seen.insert(id).second)
        throw FormatError("subject " + std::to_string(id) + " appears in more than one split");
  }
  return cohort;
}

std::filesystem::path manifest_path_for(const std::filesystem::path& path) {
  auto p = path;
  p.replace_extension(".json");
  if (p == path) p += ".manifest.json";
  return p;
}

void write_cohort(const Cohort& cohort, const std::filesystem::path& path) {
  io::write_file(path, encode_cohort(cohort));
  nlohmann::ordered_json j;
  j["magic"] = kMagic;
  j["version"] = kVersion;
  j["classes"] = cohort.num_classes;
  j["channels"] = cohort.channels;
  j["time_points"] = cohort.time_points;
  j["feature_dim"] = cohort.feature_dim();
  for (Split s : {Split::labeled, Split::unlabeled, Split::validation, Split::test}) {
    j["splits"][std::string(split_name(s))]["samples"] = cohort.split(s).size();
    j["splits"][std::string(split_name(s))]["subjects"] = cohort.subjects(s);
  }
  j["evaluation_only_labels"] = cohort.unlabeled_truth.size();
  io::write_text(manifest_path_for(path), j.dump(2) + "\n");
}

Cohort read_cohort(const std::filesystem::path& path) { return decode_cohort(io::read_file(path)); }

}  // namespace scope::data
