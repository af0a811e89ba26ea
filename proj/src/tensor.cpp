// SPDX-License-Identifier: Apache-2.0
#include "fmdd/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace fmdd {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  check_shape(shape);
  impl_->data.assign(numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<TensorImpl>()) {
  check_shape(shape);
  if (numel(shape) != data.size())
    throw ShapeError("shape " + shape_str(shape) + " holds " + std::to_string(numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

std::span<double> Tensor::mutable_grad() { return detail::grad_buffer(*impl_); }

Tensor Tensor::clone() const { return Tensor(shape(), impl_->data); }

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

NoGradGuard::NoGradGuard() : previous_(Tape::active().enabled_) { Tape::active().enabled_ = false; }
NoGradGuard::~NoGradGuard() { Tape::active().enabled_ = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw AutodiffError("backward on undefined tensor");
  if (loss.size() != 1)
    throw AutodiffError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  Tape& tape = Tape::active();
  if (tape.size() == 0) throw AutodiffError("backward without tape: no recorded operations");
  const auto& nodes = tape.nodes();
  auto it = std::find_if(nodes.rbegin(), nodes.rend(),
                         [&](const Tape::Node& n) { return n.output == loss.impl(); });
  if (it == nodes.rend()) throw AutodiffError("loss is not on the active tape");

  detail::grad_buffer(*loss.impl())[0] += 1.0;
  for (; it != nodes.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad);
  }
  tape.clear();
}

namespace detail {

std::span<double> grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

namespace {

template <class Range>
Tensor finish(std::string_view op, Shape shape, std::vector<double> data, const Range& inputs,
              Tape::BackwardFn fn) {
  Tensor out(std::move(shape), std::move(data));
  Tape& tape = Tape::active();
  if (!tape.recording()) return out;
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  Tape::Node node{op, {}, out.impl(), std::move(fn)};
  node.inputs.reserve(inputs.size());
  for (const Tensor* t : inputs) node.inputs.push_back(t->impl());
  tape.record(std::move(node));
  return out;
}

}  // namespace

Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, Tape::BackwardFn fn) {
  return finish(op, std::move(shape), std::move(data), inputs, std::move(fn));
}

Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, Tape::BackwardFn fn) {
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(inputs.size());
  for (const auto& t : inputs) ptrs.push_back(&t);
  return finish(op, std::move(shape), std::move(data), ptrs, std::move(fn));
}

}  // namespace detail

}  // namespace fmdd
