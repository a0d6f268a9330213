// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcsst/rng.hpp"

namespace dcsst {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major float64 array with optional gradient accumulator.
///
/// A Tensor is a cheap handle: copies share the same storage. Operations
/// never modify their inputs; they return new tensors. The only mutations are
/// gradient accumulation and explicit parameter updates through
/// mutable_data().
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);
  /// Normal samples redrawn until they fall within two standard deviations.
  static Tensor truncated_normal(Shape shape, Rng& rng, double stddev);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  /// Size of an axis; negative axes count from the back.
  std::size_t dim(std::ptrdiff_t axis) const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  /// Gradient buffer, zero-filled on first access.
  std::span<double> grad_buffer() const;
  void zero_grad();

  /// Deep copy that does not require grad.
  Tensor detach() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of differentiable operations for one forward pass.
///
/// Operations append an entry when a tape is active on the current thread
/// (see TapeScope) and at least one input requires grad. backward() walks the
/// entries once in reverse order.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  void record(const Tensor& output, std::vector<Tensor> inputs, std::string_view op,
              BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and propagates. Leaf gradients accumulate into
  /// their existing buffers. A tape can be replayed only once; call clear()
  /// and record a new pass for the next step.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }
  std::vector<std::string_view> op_names() const;
  void clear();

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    std::string_view op;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

/// Makes `tape` the active recorder for this thread until destruction.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording (inference) until destruction.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Checked mode scans every op output for NaN/Inf and throws NumericError.
void set_checked_mode(bool enabled);
bool checked_mode();

class CheckedModeScope {
 public:
  explicit CheckedModeScope(bool enabled);
  ~CheckedModeScope();

 private:
  bool previous_;
};

}  // namespace dcsst
