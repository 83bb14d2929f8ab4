#pragma once

#include <map>
#include <span>
#include <vector>

#include "coop/tensor.hpp"

namespace coop {

/// Logits keyed by scaling factor.
using FactorLogits = std::map<double, Tensor>;

/// Outputs of one cooperative step. `teammate_b` and `leader` may be empty
/// for single-network methods.
struct CohortOutputs {
  FactorLogits teammate_a;
  FactorLogits teammate_b;
  Tensor leader;
  std::vector<int> labels;

  /// Throws ContractError on a violated invariant.
  void validate(bool require_b, bool require_leader) const;
};

struct LossBreakdown {
  double self_a = 0.0;
  double self_b = 0.0;
  double interactive = 0.0;
  double guided = 0.0;
  double total = 0.0;
  double kd_lambda = 1.0;
  double kd_tau = 1.0;
};

/// Sub-factors (excluding 1.0) and the full set including 1.0.
struct ScalingSet {
  std::vector<double> sub_factors;
  std::vector<double> full_factors;

  static ScalingSet from_factors(std::span<const double> factors);
};

/// (1 - lambda) * CE(student) + lambda * tau^2 KL(student, stopgrad(teacher)).
Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
               std::span<const int> labels, double lambda, double tau);

/// CE(full) + lambda * sum_i tau^2 KL(sub_i, stopgrad(full)).
Tensor simple_self_distill(const Tensor& full_logits, std::span<const Tensor> sub_logits,
                           std::span<const int> labels, double lambda, double tau);

/// sum_i (tau^2 / s_i) KL(sub_i, stopgrad(full)). Every key must lie in (0, 1).
/// Returns a zero scalar if `subs` is empty.
Tensor sfsl_subnet_loss(const Tensor& full_logits, const FactorLogits& subs, double tau);

/// Weight applied to the sub-net at factor s.
double sfsl_weight(double s);

/// CE(logits[1.0]) + sfsl_subnet_loss over the remaining keys with tau = 1.
Tensor self_learning_loss(const FactorLogits& logits, std::span<const int> labels);

/// sum_s KL(a_s, stopgrad(b_s)) + KL(b_s, stopgrad(a_s)) over the shared factor set.
Tensor interactive_loss(const CohortOutputs& outputs);

/// CE(leader) + sum_{i in a,b} KL(teammate_i[1.0], stopgrad(leader)).
Tensor guided_loss(const CohortOutputs& outputs);

/// sum_s CE(logits[s]) over every factor; the ablation baseline.
Tensor ce_only_loss(const FactorLogits& logits, std::span<const int> labels);

/// Which cooperative terms enter the total.
struct LossTerms {
  bool self_learning = true;
  bool interactive = true;
  bool guided = true;
  /// Replace self-learning with ce_only_loss (baseline ablation).
  bool ce_only = false;
};

struct TotalLoss {
  Tensor value;
  LossBreakdown breakdown;
};

/// Sum of the enabled components in the fixed order self_a, self_b,
/// interactive, guided. Disabled components report 0.
TotalLoss total_loss(const CohortOutputs& outputs, const LossTerms& terms = {});

}  // namespace coop
