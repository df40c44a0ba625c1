#pragma once

// Finite-difference checks of every differentiable operation, shared by the
// `gradcheck` subcommand and the test suites.

#include <cstdint>
#include <string>
#include <vector>

namespace fedopal {

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;  // perturbed input entries
};

/// Runs every case at the given central-difference step on random inputs in
/// [-1, 1] (kept away from abs kinks).
std::vector<GradCheckCase> run_gradcheck_suite(double step = 1e-5,
                                               std::uint64_t seed = 0);

}  // namespace fedopal
