#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sage3d {

struct GradCheckResult {
  std::string block;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t entries = 0;  // parameter entries perturbed

  bool passed() const { return max_rel_error <= tolerance; }
};

// Central-difference checks of every network block and loss term on small
// random inputs, then of the full tiny model's training loss.
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed = 0);

}  // namespace sage3d
