// SPDX-License-Identifier: Apache-2.0
#include "dcsst/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dcsst/ops.hpp"

namespace dcsst {

namespace {

Tensor project(const Tensor& out, const Tensor& weights) {
  if (out.numel() == 1) return reshape(out, Shape{});
  return sum_all(mul(out, weights));
}

}  // namespace

GradcheckResult gradcheck(const GradcheckFn& fn, const std::vector<Tensor>& inputs,
                          const GradcheckOptions& options) {
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(t.detach());

  Tensor weights;
  {
    NoGradScope no_grad;
    const Tensor probe = fn(leaves);
    Rng rng = make_stream(options.projection_seed, "gradcheck-projection");
    weights = Tensor::uniform(probe.shape(), rng, 0.5, 1.5);
  }

  for (Tensor& t : leaves) t.set_requires_grad(true);
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = project(fn(leaves), weights);
    tape.backward(loss);
  }

  GradcheckResult result;
  Rng pick = make_stream(options.projection_seed, "gradcheck-probes");
  for (Tensor& leaf : leaves) {
    const std::size_t n = leaf.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_probes_per_input != 0 && n > options.max_probes_per_input) {
      std::shuffle(coords.begin(), coords.end(), pick);
      coords.resize(options.max_probes_per_input);
      std::sort(coords.begin(), coords.end());
    }
    std::vector<double> analytic(coords.size(), 0.0);
    if (leaf.has_grad()) {
      for (std::size_t i = 0; i < coords.size(); ++i) analytic[i] = leaf.grad()[coords[i]];
    }
    if (options.inject_fault) {
      for (double& a : analytic) a *= 1.5;
    }

    std::vector<double> numeric(coords.size());
    {
      NoGradScope no_grad;
      auto values = leaf.mutable_data();
      for (std::size_t i = 0; i < coords.size(); ++i) {
        const std::size_t c = coords[i];
        const double saved = values[c];
        values[c] = saved + options.step;
        const double plus = project(fn(leaves), weights).item();
        values[c] = saved - options.step;
        const double minus = project(fn(leaves), weights).item();
        values[c] = saved;
        numeric[i] = (plus - minus) / (2.0 * options.step);
      }
    }

    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < coords.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), options.norm_floor});
    const double rel = denom > 0.0 ? std::sqrt(diff) / denom : 0.0;
    result.rel_error.push_back(rel);
    result.max_rel_error = std::max(result.max_rel_error, rel);
  }
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

}  // namespace dcsst
