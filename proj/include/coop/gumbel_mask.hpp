#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "coop/adaptive_net.hpp"
#include "coop/random.hpp"
#include "coop/tensor.hpp"

namespace coop {

inline constexpr double kDefaultGumbelTemperature = 2.0 / 3.0;

struct GumbelConfig {
  double temperature = kDefaultGumbelTemperature;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Learnable per-block score logits; pi = softmax(score_logits) over the maskable pool.
struct MaskParams {
  Tensor score_logits;

  static MaskParams uniform(const ArchConfig& config);
};

/// Binary layer mask. `values` holds exact 0/1 entries in forward and
/// carries the gradient of `soft_scores` (phi) in backward.
struct BinaryMask {
  Tensor values;                   // length = total blocks
  Tensor soft_scores;              // phi over the maskable pool (undefined if the pool is empty)
  std::vector<std::size_t> pool;   // block indices phi refers to
  std::size_t k = 0;               // total active blocks, pinned entries included

  std::vector<double> hard() const;
};

/// g = -log(-log(u)).
double gumbel_from_uniform(double u);
std::vector<double> sample_gumbel(std::size_t n, Rng& rng);

/// Exactly k ones at the k largest scores; ties go to the lower index.
std::vector<double> hard_topk(std::span<const double> scores, std::size_t k);

/// phi_i = softmax((log pi + g) / tau_g) with pi = softmax(score_logits).
Tensor soft_scores(const Tensor& score_logits, std::span<const double> gumbel, double tau_g);

/// Forward value hard_topk(phi, k); gradient routed through phi unchanged.
Tensor straight_through_topk(const Tensor& phi, std::size_t k);

/// Total active blocks implied by a scaling factor (sum of derive_subnet counts).
std::size_t k_for_scaling(const ArchConfig& config, double s);

/// Draws a full-net mask with k active blocks. Stage-entry blocks are pinned
/// to 1 and excluded from the top-k pool. With `rng == nullptr` no Gumbel
/// noise is added (deterministic top-k of pi, used at eval).
BinaryMask sample_mask(const ArchConfig& config, const MaskParams& params, std::size_t k,
                       const GumbelConfig& gumbel, Rng* rng);

/// Optional budget regularizer: weight * sum_i B_i * cost_i / sum_i cost_i.
/// Differentiable through phi via the straight-through mask.
Tensor mask_budget_penalty(const BinaryMask& mask, std::span<const double> block_costs,
                           double weight);

}  // namespace coop
