// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "dcsst/tensor.hpp"

// Differentiable tensor operations. Every function here returns a fresh
// tensor and, when a tape is active and an input requires grad, records its
// backward rule. No implicit broadcasting except the batch-dimension
// broadcast in matmul and the explicit bias/mask helpers.

namespace dcsst {

// ---- linear algebra -------------------------------------------------------

/// a[..., m, k] x b[..., k, n] -> [..., m, n]. Batch dims must be equal, or
/// one operand may be a plain matrix that is shared across the other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x[..., in] x w[in, out] + bias[out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

/// Per-pixel channel mixing: x[B,C,H,W], w[S,C], bias[S] -> [B,S,H,W].
Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& bias);

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// Adds bias[last dim] to every row of x.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);

// ---- shape ----------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape);
/// out.shape[i] = x.shape[perm[i]].
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor transpose_last2(const Tensor& x);
Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis);
/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);

/// Index map for gather(): entry i names the source element of output
/// element i, or -1 for a zero (padding) element.
using GatherIndex = std::shared_ptr<const std::vector<std::int64_t>>;

/// out[i] = x[index[i]] (0 where index[i] < 0). Backward scatter-adds.
/// Pads, rolls, window partitions and patch extraction are all gathers.
Tensor gather(const Tensor& x, const Shape& out_shape, GatherIndex index);

// ---- reductions -----------------------------------------------------------

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
/// Mean over the listed axes; those axes are removed from the result.
Tensor mean_pool(const Tensor& x, const std::vector<std::size_t>& axes);
/// [B,C,H,W] -> [B,C,H/k,W/k] by k x k block averages.
Tensor avg_pool2d(const Tensor& x, std::size_t k);

// ---- normalization and probabilities --------------------------------------

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::ptrdiff_t axis);
Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis);
/// Normalization over the last axis, then gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Divides every row of x[N,S] by its sum.
Tensor normalize_rows(const Tensor& x);

/// Mean cross-entropy over N samples. With per-sample weights the loss is
/// (1/N) sum_i w_i l_i; when all weights are equal it is evaluated as
/// w * mean_i l_i so that a uniform weight scales the loss exactly.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     std::span<const double> weights = {});

/// Mean over rows of KL(softmax(target_logits) || softmax(logits)).
/// target_logits are constants; gradient flows into `logits` only.
Tensor kl_to_target(const Tensor& logits, const Tensor& target_logits);

// ---- attention helpers ----------------------------------------------------

/// scores[N, h, Lq, Lk] + mask[M, Lq, Lk] with mask row n % M applied to batch n.
/// The mask is treated as a constant.
Tensor add_mask(const Tensor& scores, const Tensor& mask);

/// out[b, ...] = sum_s weights[b, s] * parts[s][b, ...].
Tensor mix_by_batch(const std::vector<Tensor>& parts, const Tensor& weights);

}  // namespace dcsst
