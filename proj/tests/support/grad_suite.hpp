// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tandkit/nn.hpp"
#include "tandkit/tensor.hpp"

namespace tand::testing {

struct GradTolerance {
  double eps = 1e-3;
  double rel = 1e-2;
  double abs = 1e-4;
};

struct GradCheckResult {
  bool ok = true;
  double worst_excess = 0.0;  // max of |a - n| - (abs + rel * max(|a|, |n|)), <= 0 when ok
  std::string detail;         // first failing element
};

/// Central differences over every element of every input, against backward().
/// Non-scalar outputs are reduced by fixed random weights (seeded by
/// `weight_seed`); the numeric side accumulates that sum in double and
/// `abs` is widened by the float32 rounding of every output that moved.
GradCheckResult check_gradients(const std::vector<Tensor>& inputs, const std::function<Tensor()>& forward,
                                const GradTolerance& tol = {}, std::uint64_t weight_seed = 7);

Tensor random_tensor(Rng& rng, Shape shape, float lo = -1.0f, float hi = 1.0f);

struct GradCase {
  std::string name;
  // Builds inputs and the forward function for one random instance.
  std::function<std::pair<std::vector<Tensor>, std::function<Tensor()>>(Rng&)> make;
};

/// Every differentiable op and loss of the library.
std::vector<GradCase> gradient_cases();

struct GradSuiteResult {
  std::string name;
  int passed = 0;
  int instances = 0;
  std::string first_failure;
};

std::vector<GradSuiteResult> run_gradient_suite(int instances, std::uint64_t seed, const GradTolerance& tol = {});

}  // namespace tand::testing
