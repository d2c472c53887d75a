#pragma once
// Finite-difference checks of dJ/dx and dJ/dy at prior samples.

#include <cstdint>
#include <string>
#include <vector>

#include "fpr/env/environment.hpp"

namespace fpr::harness {

struct GradCheckOptions {
  std::size_t samples = 100;
  std::size_t directions = 8;  // random unit directions per block (x and y)
  double step = 1e-6;          // central difference step along each direction
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  int workers = 1;
  // Draws replacing skipped samples before giving up.
  std::size_t max_skips = 1000;
};

struct GradCheckSample {
  std::size_t draw = 0;  // index of the prior draw
  double cost = 0.0;
  double rel_error_x = 0.0;
  double rel_error_y = 0.0;
  double rel_error() const { return rel_error_x > rel_error_y ? rel_error_x : rel_error_y; }
};

struct GradCheckReport {
  std::string environment;
  std::vector<GradCheckSample> checked;
  std::size_t skipped = 0;  // draws with no derivative (penalty branch, tied eigenvalue)
  double tolerance = 0.0;
  double worst = 0.0;
  std::size_t failures = 0;
  bool passed() const { return failures == 0 && !checked.empty(); }
};

// Relative error between the directional derivatives of the AD gradient and
// of central differences, ||d_ad - d_fd|| / max(||d_ad||, ||d_fd||), per block.
// Samples where both norms fall below 1e-10 count as exact.
GradCheckReport gradient_check(const Environment& env, const GradCheckOptions& options);

}  // namespace fpr::harness
