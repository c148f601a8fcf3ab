#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "revcd/diffusion.hpp"
#include "revcd/model.hpp"

namespace revcd {

struct GradCheckOptions {
  DenoiserConfig model;
  LossWeights weights;
  int steps = 50;  // schedule length
  std::size_t batch = 6;
  double h = 1e-5;
  // Relative error is |a - n| / max(|a|, |n|, floor * max(1, |loss|)).
  double floor = 1e-5;
  std::uint64_t seed = 7;

  // Small model with every block active and all three losses weighted 1.
  static GradCheckOptions small();
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[<index>]"
  std::size_t checked = 0;
};

// Compares autodiff gradients of the total training loss (64-bit) with
// central finite differences for every scalar of every parameter. The batch
// and the dropout masks are held fixed across evaluations.
GradCheckResult check_model_gradients(const GradCheckOptions& options);

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Names accepted by `negate`: each swaps the suite's correct computation for
// a deliberately broken one, so the suite is expected to fail.
inline const std::set<std::string> kVerifySuites = {"kernels", "gradient", "schedule", "posterior", "cfg", "prior_kl"};

std::vector<SuiteResult> run_verify_suites(const std::set<std::string>& negate = {});

}  // namespace revcd
