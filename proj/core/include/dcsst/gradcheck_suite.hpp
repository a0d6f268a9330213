// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dcsst/gradcheck.hpp"
#include "dcsst/rng.hpp"

namespace dcsst {

/// One randomized instance of a differentiable operation: the function, the
/// tensors it is differentiated against, and a shape description.
struct GradcheckCase {
  GradcheckFn fn;
  std::vector<Tensor> inputs;
  std::string shapes;
};

struct OpCheck {
  std::string name;
  std::function<GradcheckCase(Rng&)> make;
};

/// Every differentiable operation in the library, each drawing a random
/// small shape per call.
const std::vector<OpCheck>& op_checks();
/// Throws ConfigError for an unknown name.
const OpCheck& find_op_check(const std::string& name);

struct CheckReport {
  std::string name;
  std::size_t trials = 0;
  double worst_rel_error = 0.0;
  std::string worst_shapes;
  bool passed = true;
};

CheckReport run_op_check(const OpCheck& check, std::size_t trials, std::uint64_t seed,
                         const GradcheckOptions& options = {});

/// End-to-end check of a model preset ("micro") with randomized residual
/// branches: gradients of the projected logits with respect to the images
/// and every parameter.
CheckReport run_model_check(const std::string& preset, std::uint64_t seed,
                            const GradcheckOptions& options = {});

}  // namespace dcsst
