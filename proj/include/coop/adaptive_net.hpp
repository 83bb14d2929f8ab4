#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "coop/random.hpp"
#include "coop/tensor.hpp"

namespace coop {

enum class BlockKind { Dense, Basic, Bottleneck };
enum class NormKind { Batch, None };
enum class StemKind { Linear, Conv };

/// How s * r is turned into an active block count for a stage.
///  - Ceil:           ceil(s * r)
///  - Floor:          floor(s * r)
///  - Round:          round half up of s * r
///  - EntryPlusFloor: 1 + floor(s * (r - 1)), i.e. the stage entry plus a
///                    floor share of the remaining blocks
enum class RoundingRule { Ceil, Floor, Round, EntryPlusFloor };

inline constexpr std::size_t kBottleneckExpansion = 4;

struct InputSpec {
  std::size_t channels = 2;  // feature count for vector input
  std::size_t height = 0;    // 0 => vector input [B x channels]
  std::size_t width = 0;

  bool is_image() const { return height > 0; }
};

struct StemSpec {
  StemKind kind = StemKind::Linear;
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
};

/// Stage/block description of a depth-scalable residual network.
struct ArchConfig {
  std::string name = "custom";
  InputSpec input;
  StemSpec stem;
  BlockKind block = BlockKind::Dense;
  NormKind norm = NormKind::Batch;
  std::vector<std::size_t> repeats;
  std::vector<std::size_t> channels;
  std::size_t num_classes = 2;
  RoundingRule rounding = RoundingRule::Ceil;
  /// Optional per-stage lower bound on active blocks (empty => 1 everywhere).
  std::vector<std::size_t> min_active;
  /// Layer norm on the pooled features before the classifier.
  bool head_norm = false;

  std::size_t num_stages() const { return repeats.size(); }
  std::size_t total_blocks() const;
  /// Channel count leaving stage j (bottleneck stages expand by 4).
  std::size_t stage_out_channels(std::size_t stage) const;
  /// Throws ConfigError on any violated invariant.
  void validate() const;
};

/// Resolved per-stage active block counts for a scaling factor.
struct SubnetSpec {
  double scaling_factor = 1.0;
  std::vector<std::size_t> active_counts;

  std::size_t total_active() const;
  bool operator==(const SubnetSpec&) const = default;
};

/// Prefix sub-network for scaling factor s in (0, 1].
SubnetSpec derive_subnet(const ArchConfig& config, double s);

/// Full-depth spec (every block active).
SubnetSpec full_subnet(const ArchConfig& config);

/// 0/1 mask over all blocks (stage-major) activating exactly the prefix blocks of `spec`.
std::vector<double> prefix_mask(const ArchConfig& config, const SubnetSpec& spec);

/// Flat indices of stage-entry blocks.
std::vector<std::size_t> stage_entry_blocks(const ArchConfig& config);

struct ForwardOptions {
  NormMode norm = NormMode::Eval;
  /// Fold batch statistics into running stats (train norm mode only).
  bool update_running_stats = false;
  /// Masked forward: skip blocks whose mask is 0 instead of multiplying.
  bool skip_inactive = true;

  static ForwardOptions train(bool update_stats = true) {
    return {NormMode::Train, update_stats, false};
  }
  static ForwardOptions eval() { return {NormMode::Eval, false, true}; }
};

struct InitOptions {
  /// Zero the last layer of every residual branch so each block starts as identity.
  bool zero_init_residual = false;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct NamedBuffer {
  std::string name;
  std::vector<double>* values;
};

/// Weight-shared depth-adaptive residual network.
///
/// Every sub-network is a per-stage prefix of the same blocks. Eval-mode
/// forwards do not mutate the net; train-mode forwards with
/// update_running_stats modify normalization statistics and need exclusive
/// access.
class AdaptiveNet {
 public:
  AdaptiveNet(ArchConfig config, std::uint64_t seed, std::string name = "net",
              InitOptions init = {});

  // Tensors are shared handles; a copy would alias the parameters.
  AdaptiveNet(const AdaptiveNet&) = delete;
  AdaptiveNet& operator=(const AdaptiveNet&) = delete;
  AdaptiveNet(AdaptiveNet&&) = default;
  AdaptiveNet& operator=(AdaptiveNet&&) = default;

  const ArchConfig& config() const { return config_; }
  const std::string& name() const { return name_; }

  /// Executes the stem, the first active_counts[j] blocks of every stage, and the head.
  Tensor forward(const Tensor& x, const SubnetSpec& spec, const ForwardOptions& opts) const;

  /// Every block i computes F(x) * mask[i] + shortcut(x); with skip_inactive
  /// a zero mask entry returns x without touching the block.
  Tensor forward_masked(const Tensor& x, const Tensor& mask, const ForwardOptions& opts) const;

  Tensor stem_forward(const Tensor& x, const ForwardOptions& opts) const;
  Tensor head_forward(const Tensor& features) const;
  /// F(x) + shortcut(x) for one block.
  Tensor residual_forward(std::size_t block, const Tensor& x, const ForwardOptions& opts) const;
  Tensor branch_forward(std::size_t block, const Tensor& x, const ForwardOptions& opts) const;
  Tensor shortcut_forward(std::size_t block, const Tensor& x, const ForwardOptions& opts) const;

  std::size_t num_blocks() const { return blocks_.size(); }
  std::size_t block_index(std::size_t stage, std::size_t index) const;
  std::pair<std::size_t, std::size_t> block_position(std::size_t block) const;
  bool has_projection(std::size_t block) const;

  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::vector<NamedBuffer> named_buffers();

  /// Trainable scalars in stem + active blocks + head.
  std::size_t parameter_count(const SubnetSpec& spec) const;

 private:
  struct Norm {
    Tensor gamma;
    Tensor beta;
    mutable RunningStats stats;
  };
  struct Unit {
    std::string label;
    bool conv = false;
    Tensor weight;
    Tensor bias;  // may be undefined
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::optional<Norm> norm;
    bool relu = false;
  };
  struct Block {
    std::size_t stage = 0;
    std::size_t index = 0;
    std::vector<Unit> branch;
    std::optional<Unit> shortcut;
  };

  Unit make_unit(std::string label, bool conv, std::size_t in, std::size_t out,
                 std::size_t kernel, std::size_t stride, bool with_norm, bool relu,
                 Rng& rng) const;
  Tensor apply(const Unit& u, const Tensor& x, const ForwardOptions& opts) const;
  void check_input(const Tensor& x) const;
  static void collect(const std::string& prefix, const Unit& u, std::vector<NamedTensor>& out);
  static std::size_t unit_params(const Unit& u);

  ArchConfig config_;
  std::string name_;
  std::vector<Unit> stem_;
  std::vector<Block> blocks_;
  Unit head_;
  Tensor head_gamma_;  // defined iff config_.head_norm
  Tensor head_beta_;
  std::vector<std::size_t> stage_offset_;
};

const char* to_string(BlockKind k);
const char* to_string(NormKind k);
const char* to_string(StemKind k);
const char* to_string(RoundingRule r);
BlockKind parse_block_kind(const std::string& s);
NormKind parse_norm_kind(const std::string& s);
StemKind parse_stem_kind(const std::string& s);
RoundingRule parse_rounding_rule(const std::string& s);

}  // namespace coop
