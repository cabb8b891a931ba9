#include "gprune/tensor.hpp"

#include <sstream>

namespace gprune::num {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  int64_t n = shape_numel(shape);
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(static_cast<size_t>(n), value);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw DimError("data length does not match shape " + shape_str(shape));
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (!impl_ || impl_->data.size() != 1)
    throw NotScalarError("item() on non-scalar tensor");
  return impl_->data[0];
}

std::vector<double>& Tensor::grad() {
  if (impl_->grad.size() != impl_->data.size())
    impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

Tensor Tensor::detach() const {
  Tensor t = clone();
  t.impl_->requires_grad = false;
  return t;
}

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward) {
  records_.push_back(std::move(backward));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw NotScalarError("backward() expects a scalar loss");
  Tensor seed = loss;
  seed.grad()[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  records_.clear();
}

NoGradGuard::NoGradGuard() : tape_(g_active_tape), was_enabled_(false) {
  if (tape_) {
    was_enabled_ = tape_->enabled_;
    tape_->enabled_ = false;
  }
}

NoGradGuard::~NoGradGuard() {
  if (tape_) tape_->enabled_ = was_enabled_;
}

bool grad_enabled() {
  return g_active_tape != nullptr && g_active_tape->recording();
}

}  // namespace gprune::num
