#pragma once

#include <string>
#include <vector>

namespace hccr::test {

// Worst relative error of one analytic gradient against central differences.
struct GradientCheck {
  std::string name;  // "conv2d.x", "bn.gamma", ...
  int trials = 0;
  double worst = 0.0;
  std::string worst_case;  // shape of the worst trial
};

inline constexpr double kGradientTolerance = 1e-4;

// Every layer's gradients on `trials` randomized small f64 shapes each.
std::vector<GradientCheck> run_gradient_checks(int trials);

}  // namespace hccr::test
