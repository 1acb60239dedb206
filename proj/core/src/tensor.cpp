// SPDX-License-Identifier: Apache-2.0
#include "shallowpi/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "shallowpi/error.hpp"

namespace shallowpi {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::ShapeMismatch: return "shape_mismatch";
    case ErrorKind::OutOfRange: return "out_of_range";
    case ErrorKind::InvalidState: return "invalid_state";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
  }
  return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    require(d > 0, ErrorKind::ShapeMismatch,
            "tensor dimensions must be positive, got " + shape_str(shape));
  }
  require(shape_numel(shape) == data.size(), ErrorKind::ShapeMismatch,
          "tensor of shape " + shape_str(shape) + " needs " +
              std::to_string(shape_numel(shape)) + " values, got " +
              std::to_string(data.size()));
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->data = std::make_shared<std::vector<double>>(std::move(data));
  impl_->grad = std::make_shared<std::vector<double>>();
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  require(defined(), ErrorKind::InvalidState, "use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  require(axis < s.size(), ErrorKind::OutOfRange,
          "axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<double> Tensor::data() {
  require(defined(), ErrorKind::InvalidState, "use of undefined tensor");
  return {impl_->data->data(), impl_->data->size()};
}

std::span<const double> Tensor::data() const {
  require(defined(), ErrorKind::InvalidState, "use of undefined tensor");
  return {impl_->data->data(), impl_->data->size()};
}

double Tensor::item() const {
  require(numel() == 1, ErrorKind::ShapeMismatch,
          "item() needs a single-element tensor, got " + shape_str(shape()));
  return (*impl_->data)[0];
}

bool Tensor::requires_grad() const { return defined() && impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  require(defined(), ErrorKind::InvalidState, "use of undefined tensor");
  impl_->requires_grad = value;
}

bool Tensor::has_grad() const {
  return defined() && impl_->grad->size() == impl_->data->size();
}

std::span<double> Tensor::grad() {
  require(defined(), ErrorKind::InvalidState, "use of undefined tensor");
  if (!has_grad()) impl_->grad->assign(impl_->data->size(), 0.0);
  return {impl_->grad->data(), impl_->grad->size()};
}

std::span<const double> Tensor::grad() const {
  require(has_grad(), ErrorKind::InvalidState, "tensor has no gradient");
  return {impl_->grad->data(), impl_->grad->size()};
}

void Tensor::zero_grad() {
  if (has_grad()) std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0);
}

void Tensor::clear_grad() {
  if (defined()) {
    impl_->grad->clear();
    impl_->grad->shrink_to_fit();
  }
}

Tensor Tensor::clone() const {
  return Tensor(shape(), *impl_->data, false);
}

Tensor Tensor::reshape(Shape new_shape) const {
  require(shape_numel(new_shape) == numel(), ErrorKind::ShapeMismatch,
          "cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
  Tensor out;
  out.impl_ = std::make_shared<Impl>();
  out.impl_->shape = std::move(new_shape);
  out.impl_->data = impl_->data;
  out.impl_->grad = impl_->grad;
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() noexcept { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

void Tape::record(std::string op_name, std::function<void()> backward_fn) {
  entries_.push_back({std::move(op_name), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  require(loss.defined() && loss.numel() == 1, ErrorKind::ShapeMismatch,
          "backward() needs a scalar loss");
  Tensor seed = loss;
  auto g = seed.grad();
  g[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward_fn();
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.push_back(e.op_name);
  return names;
}

}  // namespace shallowpi
