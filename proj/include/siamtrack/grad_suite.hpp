#pragma once

#include <string>
#include <vector>

#include "siamtrack/training.hpp"

namespace siamtrack {

struct GradSuiteConfig {
  double epsilon = 1e-4;
  std::size_t samples = 0;  // coordinates per op; 0 checks all of them
  std::uint64_t seed = 1;
};

struct NamedGradCheck {
  std::string op;
  GradCheckResult result;
};

// Float64 finite-difference checks on small random fixtures for dw_xcorr,
// up_xcorr, fusion, smooth_l1, total_loss, conv2d and batchnorm.
std::vector<NamedGradCheck> run_grad_suite(const GradSuiteConfig& cfg);

}  // namespace siamtrack
