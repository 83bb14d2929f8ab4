#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coop/adaptive_net.hpp"

namespace coop {

/// How multiply-accumulates are converted to FLOPs. Elementwise terms
/// (norm, activation, residual add, pooling) count the same under both.
enum class FlopConvention { Mac, TwoMac };

inline constexpr FlopConvention kDefaultFlopConvention = FlopConvention::Mac;

const char* to_string(FlopConvention c);
FlopConvention parse_flop_convention(const std::string& s);

struct Cost {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t elementwise = 0;

  double flops(FlopConvention c) const;
  Cost& operator+=(const Cost& o);
};

/// Per-component cost decomposition for one input resolution.
struct CostReport {
  Cost stem;
  std::vector<Cost> blocks;  // stage-major, every block of the full net
  Cost head;

  /// stem + active blocks of `spec` + head.
  Cost total(const ArchConfig& config, const SubnetSpec& spec) const;
};

/// `input_hw` is ignored for vector-input architectures.
CostReport cost_report(const ArchConfig& config, std::size_t input_h, std::size_t input_w);

std::uint64_t count_params(const ArchConfig& config, const SubnetSpec& spec);
double count_flops(const ArchConfig& config, const SubnetSpec& spec, std::size_t input_h,
                   std::size_t input_w, FlopConvention convention = kDefaultFlopConvention);

/// ResNet-152 for 32x32 CIFAR-100: bottleneck (3,8,36,3), widths (64,128,256,512),
/// 3x3 stride-1 stem, 100 classes, stage-entry-plus-floor rounding with the
/// final stage keeping at least two blocks.
ArchConfig resnet152_cifar_preset();

/// Small dense preset used by desk-scale experiments (2-D features, 3 classes).
ArchConfig desk_dense_preset();

/// Looks up a preset by name ("resnet152_cifar", "desk_dense"); throws ConfigError.
ArchConfig preset_by_name(const std::string& name);

struct CostRow {
  double s = 1.0;
  std::uint64_t params = 0;
  double flops = 0.0;
  std::optional<double> latency_ms;
};

/// Rows sorted by ascending s; the 1.0 row is always present.
struct CostTable {
  std::vector<CostRow> rows;

  void validate() const;
  std::string to_csv() const;
  std::string to_json() const;
  static CostTable from_csv(const std::string& text);
};

CostTable build_cost_table(const ArchConfig& config, const std::vector<double>& factors,
                           std::size_t input_h, std::size_t input_w,
                           FlopConvention convention = kDefaultFlopConvention);

enum class BudgetKind { Params, Flops, Latency };

struct Budget {
  BudgetKind kind = BudgetKind::Flops;
  double limit = 0.0;
};

/// Largest s whose cost column is <= limit. Throws InfeasibleBudgetError
/// (carrying the cheapest cost) if no row qualifies.
double budget_select(const CostTable& table, const Budget& budget);

struct LatencyStats {
  double mean_ms = 0.0;
  double stddev_ms = 0.0;
  double cv = 0.0;
  std::size_t reps = 0;
  std::vector<double> samples_ms;
};

/// Times eval-mode forwards at `spec` on a fixed pseudo-random input of
/// shape `input_shape` (batch first): `warmup` untimed runs, then `reps` timed.
LatencyStats measure_latency(const AdaptiveNet& net, const SubnetSpec& spec,
                             const Shape& input_shape, std::size_t warmup = 100,
                             std::size_t reps = 1000);

}  // namespace coop
