#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace coop {

inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = kGradCheckTolerance;

  bool all_passed() const;
  /// One line per entry: "PASS|FAIL <name> rel=<err> n=<count>".
  std::string to_text() const;
};

/// Finite-difference check of every tensor op, every distillation loss
/// (teacher roles held fixed, matching stop-gradient semantics), and the
/// straight-through mask path. Inputs are drawn from `seed`.
GradCheckReport run_gradcheck_suite(std::uint64_t seed, double tolerance = kGradCheckTolerance);

}  // namespace coop
