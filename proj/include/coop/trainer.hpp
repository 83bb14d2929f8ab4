#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "coop/adaptive_net.hpp"
#include "coop/checkpoint.hpp"
#include "coop/config.hpp"
#include "coop/data.hpp"
#include "coop/gumbel_mask.hpp"
#include "coop/losses.hpp"
#include "coop/random.hpp"

namespace coop {

inline constexpr int kMetricsSchemaVersion = 1;

/// Factors for one epoch, sorted descending with 1.0 first. Random: {1.0,
/// 0.2} plus `draws` picks with replacement from {0.3, ..., 0.9}; duplicates collapse.
std::vector<double> sample_factors(const SamplerConfig& sampler, Rng& rng);

/// Scales gradients in place so their joint L2 norm is at most max_norm; returns the norm before scaling.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

/// The 0.3..0.9 candidate pool of the random sampler.
const std::vector<double>& random_sampler_pool();

/// One trainable network with its optimizer and optional mask logits.
struct Member {
  std::string role;  // "teammate_a", "teammate_b", "leader"
  AdaptiveNet net;
  std::optional<MaskParams> mask;
  Sgd optimizer;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  std::vector<double> factors;
  LossBreakdown loss;  // batch means
  /// role -> factor -> train accuracy (leader only at 1.0).
  std::map<std::string, std::map<double, double>> accuracy;
  double wall_time_s = 0.0;

  nlohmann::ordered_json to_json() const;
};

/// Record JSON without fields that vary between identical runs (wall time).
nlohmann::ordered_json deterministic_view(const nlohmann::ordered_json& record);

struct RunOptions {
  std::string metrics_path;      // empty => no metrics file
  std::string checkpoint_path;   // empty => no checkpoint
  std::optional<std::string> resume_from;
  /// Stop after this many completed epochs (simulated interruption); checkpoints first.
  std::optional<std::size_t> stop_after;
  std::size_t checkpoint_every = 0;  // 0 => only at the end
  bool verbose = false;
};

/// argmax accuracy of the truncated sub-network at factor s, eval-mode forward.
double evaluate(const AdaptiveNet& net, double s, const Dataset& data, std::size_t batch = 512);

/// Same for the mask mechanism: deterministic top-k (no noise), inactive blocks skipped.
double evaluate_masked(const AdaptiveNet& net, const MaskParams& mask, const GumbelConfig& gumbel,
                       double s, const Dataset& data, std::size_t batch = 512);

/// Cooperative trainer over teammates (and a leader, depending on the method).
///
/// Baseline and SFSL train only teammate_a; TeamMT adds teammate_b; Coop
/// adds the leader. Every random decision draws from a per-purpose stream
/// derived from the seed, so identical configs give bit-identical runs.
class Trainer {
 public:
  Trainer(ExperimentConfig config, Dataset data);

  const ExperimentConfig& config() const { return config_; }
  const Dataset& data() const { return data_; }
  std::vector<Member>& members() { return members_; }
  const std::vector<Member>& members() const { return members_; }
  Member& member(const std::string& role);
  const Member& member(const std::string& role) const;
  std::size_t epoch() const { return epoch_; }

  LossTerms loss_terms() const;

  /// Forward every member on `x` at `factors` and assemble the cohort outputs.
  CohortOutputs forward_cohort(const Tensor& x, const std::vector<int>& labels,
                               const std::vector<double>& factors);

  /// One SGD step on a batch. Throws NumericalError on a non-finite loss.
  LossBreakdown train_step(const std::vector<std::size_t>& batch,
                           const std::vector<double>& factors, double lr);

  /// One epoch over a fresh shuffle; returns its record.
  EpochRecord run_epoch();

  std::vector<EpochRecord> train(const RunOptions& options);

  /// Accuracy of `role` at factor s on `data` using the configured mechanism.
  double accuracy(const std::string& role, double s, const Dataset& data) const;

  CheckpointFile to_checkpoint() const;
  void save_checkpoint(const std::string& path) const;
  /// Restores all state. Throws ConfigError if the config hash differs.
  void load_checkpoint(const CheckpointFile& ck);
  void load_checkpoint(const std::string& path);

 private:
  FactorLogits forward_member(Member& m, const Tensor& x, const std::vector<double>& factors);

  ExperimentConfig config_;
  Dataset data_;
  std::vector<Member> members_;
  GumbelConfig gumbel_;
  Rng shuffle_rng_;
  Rng factor_rng_;
  Rng gumbel_rng_;
  std::size_t epoch_ = 0;
  std::vector<BinaryMask> drawn_masks_;  // masks of the current step
};

/// Config section "data" resolved to a dataset (generated or loaded).
Dataset dataset_for(const ExperimentConfig& config);

/// Trainer restored from a checkpoint (config embedded in the file).
Trainer trainer_from_checkpoint(const std::string& path);

}  // namespace coop
