// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "dcsst/tensor.hpp"

namespace dcsst {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Seed of the fixed random projection used when the function output is
  /// not a scalar.
  std::uint64_t projection_seed = 17;
  /// Upper bound on probed coordinates per input; 0 probes all of them.
  std::size_t max_probes_per_input = 0;
  /// Lower bound on the relative-error denominator. Gradients that vanish
  /// identically (a key bias under softmax) otherwise compare two round-off
  /// residues.
  double norm_floor = 1e-4;
  /// Scales the analytic gradient by 1.5 before comparison. Only useful for
  /// proving the harness catches a wrong backward rule.
  bool inject_fault = false;
};

struct GradcheckResult {
  /// Per input: ||analytic - numeric|| / max(||analytic||, ||numeric||, norm_floor)
  /// over the probed coordinates.
  std::vector<double> rel_error;
  double max_rel_error = 0.0;
  bool passed = true;
};

using GradcheckFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients of `fn` against central finite
/// differences. Inputs are copied; the caller's tensors are not touched.
GradcheckResult gradcheck(const GradcheckFn& fn, const std::vector<Tensor>& inputs,
                          const GradcheckOptions& options = {});

}  // namespace dcsst
