#include "coop/gumbel_mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "coop/errors.hpp"

namespace coop {

void GumbelConfig::validate() const {
  if (!(temperature > 0.0) || temperature > 1.0) {
    throw ConfigError("mask.temperature: must lie in (0, 1], got " + std::to_string(temperature));
  }
}

MaskParams MaskParams::uniform(const ArchConfig& config) {
  return MaskParams{Tensor({config.total_blocks()}, true)};
}

std::vector<double> BinaryMask::hard() const {
  return {values.data().begin(), values.data().end()};
}

double gumbel_from_uniform(double u) {
  if (!(u > 0.0 && u < 1.0)) throw ParameterError("gumbel: u must lie in (0, 1)");
  return -std::log(-std::log(u));
}

std::vector<double> sample_gumbel(std::size_t n, Rng& rng) {
  std::vector<double> g(n);
  for (auto& v : g) {
    double u = rng.uniform_open();
    while (u >= 1.0) u = rng.uniform_open();
    v = gumbel_from_uniform(u);
  }
  return g;
}

std::vector<double> hard_topk(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw ParameterError("hard_topk: k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(scores.size()) + "]");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<double> mask(scores.size(), 0.0);
  for (std::size_t i = 0; i < k; ++i) mask[order[i]] = 1.0;
  return mask;
}

Tensor soft_scores(const Tensor& score_logits, std::span<const double> gumbel, double tau_g) {
  if (gumbel.size() != score_logits.numel()) {
    throw DimensionError("soft_scores: noise length != score length");
  }
  return softmax_tau(add_constant(log_softmax_tau(score_logits, 1.0), gumbel), tau_g);
}

Tensor straight_through_topk(const Tensor& phi, std::size_t k) {
  if (k > phi.numel()) throw ParameterError("straight_through_topk: k exceeds length");
  if (k == 0) return straight_through(std::vector<double>(phi.numel(), 0.0), phi);
  return straight_through(hard_topk(phi.data(), k), phi);
}

std::size_t k_for_scaling(const ArchConfig& config, double s) {
  return derive_subnet(config, s).total_active();
}

BinaryMask sample_mask(const ArchConfig& config, const MaskParams& params, std::size_t k,
                       const GumbelConfig& gumbel, Rng* rng) {
  gumbel.validate();
  const std::size_t n = config.total_blocks();
  if (params.score_logits.numel() != n) {
    throw DimensionError("sample_mask: score logits length != total block count");
  }
  const auto entries = stage_entry_blocks(config);
  if (k < entries.size() || k > n) {
    throw ParameterError("sample_mask: k=" + std::to_string(k) + " outside [" +
                         std::to_string(entries.size()) + ", " + std::to_string(n) + "]");
  }
  BinaryMask mask;
  mask.k = k;
  for (std::size_t i = 0; i < n; ++i)
    if (!std::binary_search(entries.begin(), entries.end(), i)) mask.pool.push_back(i);

  if (mask.pool.empty()) {
    mask.values = Tensor::full({n}, 1.0);
    return mask;
  }
  Tensor logits = gather(params.score_logits, mask.pool);
  std::vector<double> g = rng ? sample_gumbel(mask.pool.size(), *rng)
                              : std::vector<double>(mask.pool.size(), 0.0);
  mask.soft_scores = soft_scores(logits, g, gumbel.temperature);
  Tensor pool_mask = straight_through_topk(mask.soft_scores, k - entries.size());
  mask.values = scatter(pool_mask, mask.pool, n, 1.0);
  return mask;
}

Tensor mask_budget_penalty(const BinaryMask& mask, std::span<const double> block_costs,
                           double weight) {
  if (block_costs.size() != mask.values.numel()) {
    throw DimensionError("mask_budget_penalty: one cost per block required");
  }
  const double total = std::accumulate(block_costs.begin(), block_costs.end(), 0.0);
  if (!(total > 0.0)) throw ParameterError("mask_budget_penalty: costs must sum to > 0");
  std::vector<double> rel(block_costs.size());
  for (std::size_t i = 0; i < rel.size(); ++i) rel[i] = block_costs[i] / total;
  return scale(sum(mul(mask.values, Tensor::vector(rel))), weight);
}

}  // namespace coop
