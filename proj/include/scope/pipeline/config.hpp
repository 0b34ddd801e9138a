#pragma once

// Run configuration. The file format is INI with one section per component;
// every key is addressable as "section.key" both in the file and in
// command-line overrides. Unknown sections or keys are rejected by name.
//
//   [data]      cohort path and synthetic cohort shape
//   [tpn]       task-prior network architecture and training
//   [proto]     prototype bank, k-means init and refinement
//   [fusion]    rho, prototype temperature
//   [backbone]  frozen toy backbone
//   [adapter]   depth L, lambda, lambda_proto
//   [train]     stage-II schedule
//   [ablation]  etf_off, sinkhorn_off, confidence_weights_off,
//               prototype_conditioning_off, adapter_off
//   [run]       seeds, output directory

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "scope/adapter/adapter.hpp"
#include "scope/core/optimizer.hpp"
#include "scope/data/cohort.hpp"
#include "scope/fusion/fusion.hpp"
#include "scope/proto/prototypes.hpp"
#include "scope/tpn/tpn.hpp"

namespace scope::pipeline {

enum class Strategy { interleaved, sequential, two_stage, no_warmup };
std::string_view strategy_name(Strategy s) noexcept;
Strategy parse_strategy(std::string_view name);

struct AblationFlags {
  bool etf_off = false;
  bool sinkhorn_off = false;
  bool confidence_weights_off = false;
  bool prototype_conditioning_off = false;
  bool adapter_off = false;
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct Stage2Config {
  std::size_t epochs = 40;
  std::size_t warmup_epochs = 10;
  std::size_t batch_size = 32;
  double pseudo_ratio = 2.0;  // r: floor(r * B) pseudo samples per labelled batch
  OptimizerConfig optimizer{OptimizerKind::adamw, 3e-2, 1e-3};
  double min_learning_rate = 1e-6;
  Strategy strategy = Strategy::interleaved;
};

struct ScopeConfig {
  // Cohort file; empty means "generate from [data]".
  std::string cohort_path;
  data::CohortConfig data;
  tpn::TpnArch tpn_arch;
  tpn::TpnTrainConfig tpn;
  std::size_t prototypes_per_class = 3;
  proto::InitOptions proto_init;
  proto::RefineConfig proto;
  fusion::FusionOptions fusion;
  adapter::BackboneConfig backbone;
  adapter::AdapterConfig adapter;
  Stage2Config train;
  AblationFlags ablation;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string output_dir;

  // Cross-field checks (warm-up <= epochs, r > 0, matching shapes, ...).
  // ConfigError naming the key.
  void validate() const;
};

// Every key as "section.key".
std::vector<std::string> config_keys();
// Sets one key from its text form. ConfigError for an unknown key or a bad value.
void set_config_value(ScopeConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const ScopeConfig& cfg, std::string_view key);
// "section.key=value".
void apply_override(ScopeConfig& cfg, std::string_view assignment);

ScopeConfig parse_config(const std::string& ini_text);
ScopeConfig load_config(const std::filesystem::path& path);
// Full effective config, every key, in INI form (parse_config inverts it).
std::string config_to_ini(const ScopeConfig& cfg);
std::string config_to_json(const ScopeConfig& cfg);
// One-line description of the schema for usage errors.
std::string config_schema_hint();

}  // namespace scope::pipeline
