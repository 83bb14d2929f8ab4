#include "coop/losses.hpp"

#include <algorithm>
#include <string>

#include "coop/errors.hpp"

namespace coop {

namespace {

constexpr double kFull = 1.0;

const Tensor& full_of(const FactorLogits& logits, const char* who) {
  auto it = logits.find(kFull);
  if (it == logits.end()) throw ContractError(std::string(who) + ": missing factor 1.0");
  return it->second;
}

void check_logits(const Tensor& t, std::size_t batch, std::size_t classes, const char* who) {
  if (!t.defined() || t.rank() != 2 || t.dim(0) != batch || t.dim(1) != classes) {
    throw ContractError(std::string(who) + ": logits must be [" + std::to_string(batch) + "x" +
                        std::to_string(classes) + "]");
  }
}

bool same_keys(const FactorLogits& a, const FactorLogits& b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(),
                    [](const auto& x, const auto& y) { return x.first == y.first; });
}

Tensor accumulate(Tensor acc, const Tensor& term) {
  return acc.defined() ? add(acc, term) : term;
}

}  // namespace

void CohortOutputs::validate(bool require_b, bool require_leader) const {
  const Tensor& ref = full_of(teammate_a, "cohort teammate_a");
  if (ref.rank() != 2) throw ContractError("cohort: logits must be rank 2");
  const std::size_t batch = ref.dim(0), classes = ref.dim(1);
  if (labels.size() != batch) throw ContractError("cohort: label count != batch size");
  for (const auto& [s, t] : teammate_a) check_logits(t, batch, classes, "cohort teammate_a");
  if (require_b) {
    if (!same_keys(teammate_a, teammate_b)) {
      throw ContractError("cohort: teammates have different scaling-factor sets");
    }
    for (const auto& [s, t] : teammate_b) check_logits(t, batch, classes, "cohort teammate_b");
  }
  if (require_leader) check_logits(leader, batch, classes, "cohort leader");
}

ScalingSet ScalingSet::from_factors(std::span<const double> factors) {
  ScalingSet out;
  for (double s : factors) {
    if (!(s > 0.0 && s <= 1.0)) throw ParameterError("scaling factor outside (0, 1]");
    if (std::find(out.full_factors.begin(), out.full_factors.end(), s) != out.full_factors.end())
      continue;
    out.full_factors.push_back(s);
    if (s != kFull) out.sub_factors.push_back(s);
  }
  if (std::find(out.full_factors.begin(), out.full_factors.end(), kFull) == out.full_factors.end())
    out.full_factors.push_back(kFull);
  std::sort(out.sub_factors.begin(), out.sub_factors.end(), std::greater<>());
  std::sort(out.full_factors.begin(), out.full_factors.end(), std::greater<>());
  return out;
}

Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
               std::span<const int> labels, double lambda, double tau) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ParameterError("kd_loss: lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
  if (!(tau >= 1.0)) throw ParameterError("kd_loss: tau must be >= 1");
  Tensor ce = cross_entropy(student_logits, labels);
  Tensor kl = kl_div_tau(student_logits, stopgrad(teacher_logits), tau);
  return add(scale(ce, 1.0 - lambda), scale(kl, lambda));
}

Tensor simple_self_distill(const Tensor& full_logits, std::span<const Tensor> sub_logits,
                           std::span<const int> labels, double lambda, double tau) {
  Tensor total = cross_entropy(full_logits, labels);
  const Tensor teacher = stopgrad(full_logits);
  for (const auto& sub : sub_logits) {
    total = add(total, scale(kl_div_tau(sub, teacher, tau), lambda));
  }
  return total;
}

double sfsl_weight(double s) {
  if (!(s > 0.0 && s <= 1.0)) throw ParameterError("sfsl_weight: factor outside (0, 1]");
  return 1.0 / s;
}

Tensor sfsl_subnet_loss(const Tensor& full_logits, const FactorLogits& subs, double tau) {
  const Tensor teacher = stopgrad(full_logits);
  Tensor total;
  // Largest factor first: fixed reduction order.
  for (auto it = subs.rbegin(); it != subs.rend(); ++it) {
    const double s = it->first;
    if (!(s > 0.0 && s < 1.0)) {
      throw ParameterError("sfsl_subnet_loss: sub-net factor must lie in (0, 1), got " +
                           std::to_string(s));
    }
    total = accumulate(total, scale(kl_div_tau(it->second, teacher, tau), sfsl_weight(s)));
  }
  return total.defined() ? total : Tensor::scalar(0.0);
}

Tensor self_learning_loss(const FactorLogits& logits, std::span<const int> labels) {
  const Tensor& full = full_of(logits, "self_learning_loss");
  FactorLogits subs;
  for (const auto& [s, t] : logits)
    if (s != kFull) subs.emplace(s, t);
  Tensor ce = cross_entropy(full, labels);
  if (subs.empty()) return ce;
  return add(ce, sfsl_subnet_loss(full, subs, 1.0));
}

Tensor interactive_loss(const CohortOutputs& outputs) {
  if (!same_keys(outputs.teammate_a, outputs.teammate_b)) {
    throw ContractError("interactive_loss: teammates have different scaling-factor sets");
  }
  if (outputs.teammate_a.empty()) throw ContractError("interactive_loss: no outputs");
  Tensor ab, ba;
  for (auto it = outputs.teammate_a.rbegin(); it != outputs.teammate_a.rend(); ++it) {
    const Tensor& a = it->second;
    const Tensor& b = outputs.teammate_b.at(it->first);
    ab = accumulate(ab, kl_div_tau(a, stopgrad(b), 1.0));
    ba = accumulate(ba, kl_div_tau(b, stopgrad(a), 1.0));
  }
  return add(ab, ba);
}

Tensor guided_loss(const CohortOutputs& outputs) {
  if (!outputs.leader.defined()) throw ContractError("guided_loss: missing leader output");
  const Tensor teacher = stopgrad(outputs.leader);
  Tensor total = cross_entropy(outputs.leader, outputs.labels);
  total = add(total, kl_div_tau(full_of(outputs.teammate_a, "guided_loss"), teacher, 1.0));
  if (!outputs.teammate_b.empty()) {
    total = add(total, kl_div_tau(full_of(outputs.teammate_b, "guided_loss"), teacher, 1.0));
  }
  return total;
}

Tensor ce_only_loss(const FactorLogits& logits, std::span<const int> labels) {
  full_of(logits, "ce_only_loss");
  Tensor total;
  for (auto it = logits.rbegin(); it != logits.rend(); ++it) {
    total = accumulate(total, cross_entropy(it->second, labels));
  }
  return total;
}

TotalLoss total_loss(const CohortOutputs& outputs, const LossTerms& terms) {
  const bool has_b = !outputs.teammate_b.empty();
  const bool need_b = terms.interactive;
  const bool need_leader = terms.guided;
  outputs.validate(need_b || has_b, need_leader);

  auto self_term = [&](const FactorLogits& logits) {
    return terms.ce_only ? ce_only_loss(logits, outputs.labels)
                         : self_learning_loss(logits, outputs.labels);
  };
  const bool use_self = terms.self_learning || terms.ce_only;

  TotalLoss out;
  Tensor total;
  if (use_self) {
    Tensor a = self_term(outputs.teammate_a);
    out.breakdown.self_a = a.item();
    total = accumulate(total, a);
    if (has_b) {
      Tensor b = self_term(outputs.teammate_b);
      out.breakdown.self_b = b.item();
      total = accumulate(total, b);
    }
  }
  if (terms.interactive) {
    Tensor c = interactive_loss(outputs);
    out.breakdown.interactive = c.item();
    total = accumulate(total, c);
  }
  if (terms.guided) {
    Tensor g = guided_loss(outputs);
    out.breakdown.guided = g.item();
    total = accumulate(total, g);
  }
  if (!total.defined()) throw ContractError("total_loss: no loss term enabled");
  out.value = total;
  out.breakdown.total = total.item();
  return out;
}

}  // namespace coop
