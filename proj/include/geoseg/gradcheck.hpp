#pragma once

// Central finite-difference checks of every recorded operation against a 64-bit
// reference forward. Entries whose perturbation flips a non-differentiable decision
// (ReLU sign, max-pool winner, |a - b| sign, probability floor) are excluded.

#include <cstdint>
#include <string>
#include <vector>

namespace geoseg {

struct GradCheckOptions {
  double step = 1e-3;           // central difference step h
  double min_magnitude = 1e-6;  // entries with max(|analytic|, |numeric|) below are not compared
  int instances = 20;           // random instances per operation
  std::size_t max_entries = 0;  // per input tensor and instance; 0 = every entry
  std::uint64_t seed = 0;
};

struct OpCheck {
  std::string op;
  int instances = 0;
  std::size_t compared = 0;
  std::size_t excluded = 0;  // kink crossings
  double max_rel_error = 0;
  double max_rel_error_large = 0;   // restricted to entries above 10 * min_magnitude
  double max_abs_teacher_grad = 0;  // consistency ops: gradient reaching the teacher branch
  double seconds = 0;
};

struct GradCheckReport {
  std::vector<OpCheck> ops;
  double max_rel_error() const;
  bool passed(double tolerance = 1e-3) const;
};

/// Names accepted by run_gradcheck's filter.
const std::vector<std::string>& gradcheck_ops();

/// Runs the suites named in `ops` (all when empty).
GradCheckReport run_gradcheck(const GradCheckOptions& options, const std::vector<std::string>& ops = {});

}  // namespace geoseg
