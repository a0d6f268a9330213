// SPDX-License-Identifier: Apache-2.0
#include "dcsst/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dcsst/error.hpp"

namespace dcsst {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_finite(const Tensor& out, std::string_view op) {
  if (!checked_mode()) return;
  for (double v : out.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

/// Registers the backward rule when recording applies.
Tensor finish(Tensor out, std::vector<Tensor> inputs, std::string_view op, Tape::BackwardFn fn) {
  check_finite(out, op);
  Tape* tape = active_tape();
  if (tape == nullptr) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (!needs) return out;
  out.set_requires_grad(true);
  tape->record(out, std::move(inputs), op, std::move(fn));
  return out;
}

std::size_t norm_axis(std::ptrdiff_t axis, std::size_t rank) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    std::size_t j = 0;
    // Four independent dot products per pass; each keeps its own summation order.
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + j * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ai[p];
        s0 += av * b0[p];
        s1 += av * b1[p];
        s2 += av * b2[p];
        s3 += av * b3[p];
      }
      ci[j] += s0;
      ci[j + 1] += s1;
      ci[j + 2] += s2;
      ci[j + 3] += s3;
    }
    for (; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// c[m,n] += a[k,m]^T * b[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// dst[out_index] = src[permuted index]; out.shape[i] = in.shape[perm[i]].
void permute_copy(const double* src, const Shape& in_shape, const std::vector<std::size_t>& perm,
                  double* dst) {
  const std::size_t r = in_shape.size();
  const auto in_strides = strides_of(in_shape);
  Shape out_shape(r);
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[perm[i]];
    step[i] = in_strides[perm[i]];
  }
  const std::size_t total = shape_numel(in_shape);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src_off = 0;
  for (std::size_t o = 0; o < total; ++o) {
    dst[o] = src[src_off];
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out_shape[d]) {
        src_off += step[d];
        break;
      }
      src_off -= step[d] * (out_shape[d] - 1);
      idx[d] = 0;
    }
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  if (k != k2 || (!batch_a.empty() && !batch_b.empty() && batch_a != batch_b)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const Shape& batch = batch_a.empty() ? batch_b : batch_a;
  const std::size_t nb = shape_numel(batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out(out_shape);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = out.mutable_data().data();
  const bool share_b = batch_b.empty();
  const bool share_a = batch_a.empty() && !batch_b.empty();
  if (share_b) {
    gemm_nn(nb * m, n, k, pa, pb, pc);
  } else {
    for (std::size_t i = 0; i < nb; ++i) {
      gemm_nn(m, n, k, share_a ? pa : pa + i * m * k, pb + i * k * n, pc + i * m * n);
    }
  }
  return finish(out, {a, b}, "matmul", [a, b, m, n, k, nb, share_a, share_b](std::span<const double> g) {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    if (a.requires_grad()) {
      double* ga = a.grad_buffer().data();
      if (share_b) {
        gemm_nt(nb * m, k, n, g.data(), pb, ga);
      } else {
        for (std::size_t i = 0; i < nb; ++i) {
          gemm_nt(m, k, n, g.data() + i * m * n, pb + i * k * n, share_a ? ga : ga + i * m * k);
        }
      }
    }
    if (b.requires_grad()) {
      double* gb = b.grad_buffer().data();
      if (share_b) {
        gemm_tn(k, n, nb * m, pa, g.data(), gb);
      } else {
        for (std::size_t i = 0; i < nb; ++i) {
          gemm_tn(k, n, m, share_a ? pa : pa + i * m * k, g.data() + i * m * n, gb + i * k * n);
        }
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  return add_bias(matmul(x, w), bias);
}

Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 4 || w.rank() != 2 || bias.rank() != 1) {
    throw DimensionError("conv1x1 expects x[B,C,H,W], w[S,C], bias[S]; got " +
                         shape_str(x.shape()) + ", " + shape_str(w.shape()) + ", " +
                         shape_str(bias.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const std::size_t S = w.dim(0);
  if (w.dim(1) != C || bias.dim(0) != S) {
    throw DimensionError("conv1x1 channel mismatch: x " + shape_str(x.shape()) + ", w " +
                         shape_str(w.shape()) + ", bias " + shape_str(bias.shape()));
  }
  Tensor out({B, S, x.dim(2), x.dim(3)});
  double* po = out.mutable_data().data();
  for (std::size_t b = 0; b < B; ++b) {
    double* ob = po + b * S * HW;
    for (std::size_t s = 0; s < S; ++s) std::fill(ob + s * HW, ob + (s + 1) * HW, bias[s]);
    gemm_nn(S, HW, C, w.data().data(), x.data().data() + b * C * HW, ob);
  }
  return finish(out, {x, w, bias}, "conv1x1", [x, w, bias, B, C, S, HW](std::span<const double> g) {
    for (std::size_t b = 0; b < B; ++b) {
      const double* gb = g.data() + b * S * HW;
      if (x.requires_grad()) {
        gemm_tn(C, HW, S, w.data().data(), gb, x.grad_buffer().data() + b * C * HW);
      }
      if (w.requires_grad()) {
        gemm_nt(S, C, HW, gb, x.data().data() + b * C * HW, w.grad_buffer().data());
      }
      if (bias.requires_grad()) {
        auto gbias = bias.grad_buffer();
        for (std::size_t s = 0; s < S; ++s) {
          double acc = 0.0;
          for (std::size_t i = 0; i < HW; ++i) acc += gb[s * HW + i];
          gbias[s] += acc;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
  return finish(out, {a, b}, "add", [a, b](std::span<const double> g) {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto gt = t->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] - b[i];
  return finish(out, {a, b}, "sub", [a, b](std::span<const double> g) {
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
  return finish(out, {a, b}, "mul", [a, b](std::span<const double> g) {
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  return finish(out, {x}, "scale", [x, factor](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || x.dim(-1) != bias.dim(0)) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match last axis of " + shape_str(x.shape()));
  }
  const std::size_t n = bias.dim(0);
  const std::size_t rows = x.numel() / n;
  Tensor out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) o[r * n + j] = x[r * n + j] + bias[j];
  }
  return finish(out, {x, bias}, "add_bias", [x, bias, rows, n](std::span<const double> g) {
    if (x.requires_grad()) {
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto gb = bias.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > 0.0 ? x[i] : 0.0;
  return finish(out, {x}, "relu", [x](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) gx[i] += g[i];
    }
  });
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
  return finish(out, {x}, "gelu", [x](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                         " changes the element count");
  }
  Tensor out(shape, std::vector<double>(x.data().begin(), x.data().end()));
  return finish(out, {x}, "reshape", [x](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) throw DimensionError("permute: permutation length != rank");
  std::vector<bool> seen(r, false);
  for (std::size_t p : perm) {
    if (p >= r || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[perm[i]];
  Tensor out(out_shape);
  permute_copy(x.data().data(), x.shape(), perm, out.mutable_data().data());
  return finish(out, {x}, "permute", [x, perm, out_shape](std::span<const double> g) {
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
    std::vector<double> back(g.size());
    permute_copy(g.data(), out_shape, inverse, back.data());
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < back.size(); ++i) gx[i] += back[i];
  });
}

Tensor transpose_last2(const Tensor& x) {
  std::vector<std::size_t> perm(x.rank());
  std::iota(perm.begin(), perm.end(), 0);
  if (perm.size() < 2) throw DimensionError("transpose_last2 needs rank >= 2");
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(x, perm);
}

Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t start, std::size_t length) {
  const std::size_t ax = norm_axis(axis, x.rank());
  if (length == 0 || start + length > x.shape()[ax]) {
    throw DimensionError("slice [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range for axis of size " +
                         std::to_string(x.shape()[ax]));
  }
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  Tensor out(out_shape);
  auto o = out.mutable_data();
  for (std::size_t a = 0; a < s.outer; ++a) {
    const double* src = x.data().data() + (a * s.len + start) * s.inner;
    std::copy(src, src + length * s.inner, o.data() + a * length * s.inner);
  }
  return finish(out, {x}, "slice", [x, s, start, length](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (std::size_t a = 0; a < s.outer; ++a) {
      double* dst = gx.data() + (a * s.len + start) * s.inner;
      const double* src = g.data() + a * length * s.inner;
      for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const std::size_t ax = norm_axis(axis, parts[0].rank());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const Tensor& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    if (a.size() != b.size()) throw DimensionError("concat rank mismatch");
    a[ax] = b[ax] = 0;
    if (a != b) {
      throw DimensionError("concat shapes " + shape_str(p.shape()) + " and " +
                           shape_str(parts[0].shape()) + " disagree off-axis");
    }
    out_shape[ax] += p.shape()[ax];
  }
  const AxisSplit s = split_at(out_shape, ax);
  Tensor out(out_shape);
  auto o = out.mutable_data();
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t len = p.shape()[ax];
    for (std::size_t a = 0; a < s.outer; ++a) {
      const double* src = p.data().data() + a * len * s.inner;
      std::copy(src, src + len * s.inner, o.data() + (a * s.len + offset) * s.inner);
    }
    offset += len;
  }
  return finish(out, parts, "concat", [parts, s, ax](std::span<const double> g) {
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      const std::size_t len = p.shape()[ax];
      if (p.requires_grad()) {
        auto gp = p.grad_buffer();
        for (std::size_t a = 0; a < s.outer; ++a) {
          const double* src = g.data() + (a * s.len + offset) * s.inner;
          double* dst = gp.data() + a * len * s.inner;
          for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
        }
      }
      offset += len;
    }
  });
}

Tensor stack(const std::vector<Tensor>& parts) {
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, 0);
}

Tensor gather(const Tensor& x, const Shape& out_shape, GatherIndex index) {
  if (!index || index->size() != shape_numel(out_shape)) {
    throw DimensionError("gather index size does not match output shape " + shape_str(out_shape));
  }
  const auto n_in = static_cast<std::int64_t>(x.numel());
  Tensor out(out_shape);
  auto o = out.mutable_data();
  const auto& idx = *index;
  for (std::size_t i = 0; i < o.size(); ++i) {
    const std::int64_t src = idx[i];
    if (src >= n_in) throw DimensionError("gather index out of range");
    o[i] = src < 0 ? 0.0 : x[static_cast<std::size_t>(src)];
  }
  return finish(out, {x}, "gather", [x, index](std::span<const double> g) {
    auto gx = x.grad_buffer();
    const auto& idx = *index;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (idx[i] >= 0) gx[static_cast<std::size_t>(idx[i])] += g[i];
    }
  });
}

// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return finish(Tensor::scalar(acc), {x}, "sum_all", [x](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (double& v : gx) v += g[0];
  });
}

Tensor mean_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  return finish(Tensor::scalar(acc / n), {x}, "mean_all", [x, n](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (double& v : gx) v += g[0] / n;
  });
}

Tensor mean_pool(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  std::vector<bool> reduced(r, false);
  for (std::size_t a : axes) {
    if (a >= r || reduced[a]) throw DimensionError("mean_pool: invalid axis list");
    reduced[a] = true;
  }
  std::vector<std::size_t> perm;
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < r; ++i) {
    if (!reduced[i]) {
      perm.push_back(i);
      out_shape.push_back(x.shape()[i]);
    }
  }
  for (std::size_t i = 0; i < r; ++i) {
    if (reduced[i]) {
      perm.push_back(i);
      count *= x.shape()[i];
    }
  }
  const bool identity_perm = std::is_sorted(perm.begin(), perm.end());
  const Tensor src = identity_perm ? x : permute(x, perm);
  const std::size_t rows = src.numel() / count;
  Tensor out(out_shape);
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < count; ++j) acc += src[i * count + j];
    o[i] = acc / static_cast<double>(count);
  }
  return finish(out, {src}, "mean_pool", [src, rows, count](std::span<const double> g) {
    auto gs = src.grad_buffer();
    const double inv = 1.0 / static_cast<double>(count);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < count; ++j) gs[i * count + j] += g[i] * inv;
    }
  });
}

Tensor avg_pool2d(const Tensor& x, std::size_t k) {
  if (x.rank() != 4 || k == 0 || x.dim(2) % k != 0 || x.dim(3) % k != 0) {
    throw DimensionError("avg_pool2d: factor " + std::to_string(k) + " does not tile " +
                         shape_str(x.shape()));
  }
  const std::size_t BC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = H / k, Wo = W / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  Tensor out({x.dim(0), x.dim(1), Ho, Wo});
  auto o = out.mutable_data();
  for (std::size_t p = 0; p < BC; ++p) {
    for (std::size_t i = 0; i < Ho; ++i) {
      for (std::size_t j = 0; j < Wo; ++j) {
        double acc = 0.0;
        for (std::size_t di = 0; di < k; ++di) {
          for (std::size_t dj = 0; dj < k; ++dj) acc += x[(p * H + i * k + di) * W + j * k + dj];
        }
        o[(p * Ho + i) * Wo + j] = acc * inv;
      }
    }
  }
  return finish(out, {x}, "avg_pool2d", [x, BC, H, W, Ho, Wo, k, inv](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (std::size_t p = 0; p < BC; ++p) {
      for (std::size_t i = 0; i < Ho; ++i) {
        for (std::size_t j = 0; j < Wo; ++j) {
          const double v = g[(p * Ho + i) * Wo + j] * inv;
          for (std::size_t di = 0; di < k; ++di) {
            for (std::size_t dj = 0; dj < k; ++dj) gx[(p * H + i * k + di) * W + j * k + dj] += v;
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  Tensor out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t a = 0; a < s.outer; ++a) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = a * s.len * s.inner + in;
      double mx = x[base];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, x[base + l * s.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const double e = std::exp(x[base + l * s.inner] - mx);
        o[base + l * s.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) o[base + l * s.inner] /= total;
    }
  }
  return finish(out, {x}, "softmax", [x, out, s](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = a * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) dot += g[base + l * s.inner] * out[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t i = base + l * s.inner;
          gx[i] += out[i] * (g[i] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  Tensor out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t a = 0; a < s.outer; ++a) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = a * s.len * s.inner + in;
      double mx = x[base];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, x[base + l * s.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) total += std::exp(x[base + l * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t l = 0; l < s.len; ++l) o[base + l * s.inner] = x[base + l * s.inner] - lse;
    }
  }
  return finish(out, {x}, "log_softmax", [x, out, s](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = a * s.len * s.inner + in;
        double gsum = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) gsum += g[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t i = base + l * s.inner;
          gx[i] += g[i] - std::exp(out[i]) * gsum;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (eps <= 0.0) throw ConfigError("layer_norm eps must be positive");
  const std::size_t D = x.dim(-1);
  if (gamma.shape() != Shape{D} || beta.shape() != Shape{D}) {
    throw DimensionError("layer_norm affine parameters must have shape [" + std::to_string(D) + "]");
  }
  const std::size_t rows = x.numel() / D;
  Tensor out(x.shape());
  auto o = out.mutable_data();
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * D;
    double mean = 0.0;
    for (std::size_t j = 0; j < D; ++j) mean += xr[j];
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t j = 0; j < D; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(D);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    for (std::size_t j = 0; j < D; ++j) {
      const double h = (xr[j] - mean) * inv;
      (*xhat)[r * D + j] = h;
      o[r * D + j] = h * gamma[j] + beta[j];
    }
  }
  return finish(out, {x, gamma, beta}, "layer_norm",
                [x, gamma, beta, xhat, rstd, rows, D](std::span<const double> g) {
                  const auto& xh = *xhat;
                  if (gamma.requires_grad()) {
                    auto gg = gamma.grad_buffer();
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t j = 0; j < D; ++j) gg[j] += g[r * D + j] * xh[r * D + j];
                    }
                  }
                  if (beta.requires_grad()) {
                    auto gb = beta.grad_buffer();
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t j = 0; j < D; ++j) gb[j] += g[r * D + j];
                    }
                  }
                  if (!x.requires_grad()) return;
                  auto gx = x.grad_buffer();
                  const double invD = 1.0 / static_cast<double>(D);
                  for (std::size_t r = 0; r < rows; ++r) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t j = 0; j < D; ++j) {
                      const double d = g[r * D + j] * gamma[j];
                      mean_d += d;
                      mean_dx += d * xh[r * D + j];
                    }
                    mean_d *= invD;
                    mean_dx *= invD;
                    for (std::size_t j = 0; j < D; ++j) {
                      const double d = g[r * D + j] * gamma[j];
                      gx[r * D + j] += (*rstd)[r] * (d - mean_d - xh[r * D + j] * mean_dx);
                    }
                  }
                });
}

Tensor normalize_rows(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("normalize_rows expects a matrix");
  const std::size_t N = x.dim(0), S = x.dim(1);
  Tensor out(x.shape());
  auto o = out.mutable_data();
  std::vector<double> sums(N, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t s = 0; s < S; ++s) sums[n] += x[n * S + s];
    for (std::size_t s = 0; s < S; ++s) o[n * S + s] = x[n * S + s] / sums[n];
  }
  return finish(out, {x}, "normalize_rows", [x, out, sums, N, S](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (std::size_t n = 0; n < N; ++n) {
      double dot = 0.0;
      for (std::size_t s = 0; s < S; ++s) dot += g[n * S + s] * out[n * S + s];
      for (std::size_t s = 0; s < S; ++s) gx[n * S + s] += (g[n * S + s] - dot) / sums[n];
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     std::span<const double> weights) {
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy expects logits[N,C], got " + shape_str(logits.shape()));
  }
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  if (targets.size() != N) throw DimensionError("cross_entropy: one target per row required");
  if (!weights.empty() && weights.size() != N) {
    throw DimensionError("cross_entropy: one weight per row required");
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= C) {
      throw IndexError("cross_entropy target " + std::to_string(t) + " outside [0, " +
                       std::to_string(C) + ")");
    }
  }
  bool uniform = true;
  for (std::size_t i = 1; i < weights.size(); ++i) uniform = uniform && weights[i] == weights[0];
  auto probs = std::make_shared<std::vector<double>>(N * C);
  double unweighted = 0.0, weighted = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double* row = logits.data().data() + i * C;
    const double mx = *std::max_element(row, row + C);
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) total += std::exp(row[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < C; ++c) (*probs)[i * C + c] = std::exp(row[c] - lse);
    const double li = lse - row[targets[i]];
    unweighted += li;
    if (!weights.empty()) weighted += weights[i] * li;
  }
  const double n = static_cast<double>(N);
  double loss = unweighted / n;
  if (!weights.empty()) loss = uniform ? weights[0] * (unweighted / n) : weighted / n;
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return finish(Tensor::scalar(loss), {logits}, "cross_entropy",
                [logits, probs, tgt, w, N, C, n](std::span<const double> g) {
                  auto gl = logits.grad_buffer();
                  for (std::size_t i = 0; i < N; ++i) {
                    const double coeff = g[0] * (w.empty() ? 1.0 : w[i]) / n;
                    for (std::size_t c = 0; c < C; ++c) {
                      const double y = static_cast<int>(c) == tgt[i] ? 1.0 : 0.0;
                      gl[i * C + c] += coeff * ((*probs)[i * C + c] - y);
                    }
                  }
                });
}

Tensor kl_to_target(const Tensor& logits, const Tensor& target_logits) {
  require_same_shape(logits, target_logits, "kl_to_target");
  if (logits.rank() != 2) throw DimensionError("kl_to_target expects [N,C] logits");
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  Tensor log_q, log_p;
  {
    NoGradScope no_grad;
    log_q = log_softmax(logits, 1);
    log_p = log_softmax(target_logits, 1);
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < N * C; ++i) {
    const double p = std::exp(log_p[i]);
    if (p > 0.0) acc += p * (log_p[i] - log_q[i]);
  }
  const double n = static_cast<double>(N);
  return finish(Tensor::scalar(acc / n), {logits}, "kl_to_target",
                [logits, log_q, log_p, N, C, n](std::span<const double> g) {
                  auto gl = logits.grad_buffer();
                  for (std::size_t i = 0; i < N * C; ++i) {
                    gl[i] += g[0] * (std::exp(log_q[i]) - std::exp(log_p[i])) / n;
                  }
                });
}

// ---------------------------------------------------------------------------

Tensor add_mask(const Tensor& scores, const Tensor& mask) {
  if (scores.rank() != 4 || mask.rank() != 3 || scores.dim(2) != mask.dim(1) ||
      scores.dim(3) != mask.dim(2) || scores.dim(0) % mask.dim(0) != 0) {
    throw DimensionError("mask " + shape_str(mask.shape()) + " incompatible with scores " +
                         shape_str(scores.shape()));
  }
  const std::size_t N = scores.dim(0), heads = scores.dim(1), M = mask.dim(0);
  const std::size_t block = scores.dim(2) * scores.dim(3);
  Tensor out(scores.shape());
  auto o = out.mutable_data();
  for (std::size_t nb = 0; nb < N; ++nb) {
    const double* m = mask.data().data() + (nb % M) * block;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = (nb * heads + h) * block;
      for (std::size_t i = 0; i < block; ++i) o[off + i] = scores[off + i] + m[i];
    }
  }
  return finish(out, {scores}, "add_mask", [scores](std::span<const double> g) {
    auto gs = scores.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
  });
}

Tensor mix_by_batch(const std::vector<Tensor>& parts, const Tensor& weights) {
  if (parts.empty()) throw DimensionError("mix_by_batch needs at least one part");
  const std::size_t S = parts.size();
  const std::size_t B = parts[0].dim(0);
  if (weights.shape() != Shape{B, S}) {
    throw DimensionError("mix_by_batch weights " + shape_str(weights.shape()) + " != [" +
                         std::to_string(B) + "," + std::to_string(S) + "]");
  }
  for (const Tensor& p : parts) require_same_shape(p, parts[0], "mix_by_batch");
  const std::size_t per = parts[0].numel() / B;
  Tensor out(parts[0].shape());
  auto o = out.mutable_data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s < S; ++s) {
      const double w = weights[b * S + s];
      const double* src = parts[s].data().data() + b * per;
      double* dst = o.data() + b * per;
      for (std::size_t i = 0; i < per; ++i) dst[i] += w * src[i];
    }
  }
  std::vector<Tensor> inputs = parts;
  inputs.push_back(weights);
  return finish(out, inputs, "mix_by_batch", [parts, weights, B, S, per](std::span<const double> g) {
    for (std::size_t s = 0; s < S; ++s) {
      const Tensor& p = parts[s];
      if (p.requires_grad()) {
        auto gp = p.grad_buffer();
        for (std::size_t b = 0; b < B; ++b) {
          const double w = weights[b * S + s];
          for (std::size_t i = 0; i < per; ++i) gp[b * per + i] += w * g[b * per + i];
        }
      }
    }
    if (weights.requires_grad()) {
      auto gw = weights.grad_buffer();
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t s = 0; s < S; ++s) {
          const double* src = parts[s].data().data() + b * per;
          double acc = 0.0;
          for (std::size_t i = 0; i < per; ++i) acc += g[b * per + i] * src[i];
          gw[b * S + s] += acc;
        }
      }
    }
  });
}

}  // namespace dcsst
