#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "coop/adaptive_net.hpp"
#include "coop/data.hpp"
#include "coop/gumbel_mask.hpp"

namespace coop {

enum class SubnetMechanism { Truncation, Mask };
enum class TrainMethod { Baseline, Sfsl, TeamMT, Coop };
enum class SamplerKind { Static, Random };

const char* to_string(SubnetMechanism m);
const char* to_string(TrainMethod m);
const char* to_string(SamplerKind k);
SubnetMechanism parse_mechanism(const std::string& s);
TrainMethod parse_method(const std::string& s);
SamplerKind parse_sampler_kind(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 200;
  double warmup_lr = 1e-2;
  std::size_t warmup_epochs = 1;
  std::vector<double> rates{1e-1, 1e-2, 1e-3, 1e-4};
  /// First epoch at which rates[i + 1] applies (boundary-inclusive).
  std::vector<std::size_t> boundaries{75, 130, 180};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  SubnetMechanism mechanism = SubnetMechanism::Truncation;
  TrainMethod method = TrainMethod::Coop;
  /// Factors reported in per-epoch metrics.
  std::vector<double> eval_factors{0.2, 0.4, 0.6, 0.8, 1.0};
  std::size_t eval_every = 1;
  /// Rescale each network's gradient to at most this global L2 norm (0 = off).
  double grad_clip = 0.0;
  /// Start every residual branch at zero (last norm gamma or last layer).
  bool zero_init_residual = false;

  void validate() const;
};

/// Reference boundaries (75, 130, 180 over 200 epochs) rescaled to `epochs`.
std::vector<std::size_t> scaled_boundaries(std::size_t epochs);

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::Random;
  std::vector<double> static_factors{1.0, 0.7, 0.4, 0.2};
  std::size_t draws = 2;

  void validate() const;
};

struct MaskConfig {
  double temperature = kDefaultGumbelTemperature;
  bool budget_regularizer = false;
  double budget_weight = 0.0;

  void validate() const;
};

struct DataConfig {
  DataSpec spec;
  /// Load from file instead of generating.
  std::optional<std::string> path;
};

struct ExperimentConfig {
  ArchConfig arch;
  TrainConfig train;
  SamplerConfig sampler;
  MaskConfig mask;
  DataConfig data;

  void validate() const;
  /// Stable 16-hex-digit FNV-1a hash of the canonical JSON form.
  std::string hash() const;
};

nlohmann::ordered_json to_json(const ArchConfig& c);
nlohmann::ordered_json to_json(const ExperimentConfig& c);

/// Strict parse: unknown keys and type mismatches throw ConfigError naming
/// the offending key. Missing keys keep their defaults. `arch` may name a
/// preset via "preset" and override individual fields.
ArchConfig arch_from_json(const nlohmann::json& j);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::string& path);

/// Applies COOP_SEED from the environment if set; returns true if applied.
bool apply_seed_override(ExperimentConfig& cfg);

}  // namespace coop
