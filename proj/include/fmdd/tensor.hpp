// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fmdd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown whenever operand extents do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown for misuse of the gradient tape (non-scalar loss, no tape, ...).
class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  // Empty until a backward pass (or the caller) populates it.
  std::vector<double> grad;
  bool requires_grad = false;
};

/// Dense row-major tensor of 64-bit floats.
///
/// A Tensor is a shared handle: copies alias the same storage. Values are
/// treated as immutable once produced by an op; only parameters are updated
/// in place (optimizer, init, checkpoint load) through mutable_data().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();
  void zero_grad() { impl_->grad.clear(); }

  /// Deep copy of the values; the copy is a fresh leaf off the tape.
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Append-only record of differentiable primitive ops for one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  struct Node {
    std::string_view op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };

  /// The calling thread's tape.
  static Tape& active();

  bool recording() const { return enabled_; }
  void record(Node node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

 private:
  friend class NoGradGuard;
  std::vector<Node> nodes_;
  bool enabled_ = true;
};

/// Disables tape recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse sweep from a scalar loss. Gradients are summed into every
/// requires_grad tensor reachable from the loss; the tape is cleared.
void backward(const Tensor& loss);

namespace detail {

/// Grad buffer of `t`, allocated as zeros on first use.
std::span<double> grad_buffer(TensorImpl& t);

/// Builds an op result and, when any input requires grad and the tape is
/// recording, registers `fn` as its backward rule.
Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, Tape::BackwardFn fn);
Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, Tape::BackwardFn fn);

}  // namespace detail

}  // namespace fmdd
