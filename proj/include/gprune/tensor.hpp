#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gprune/errors.hpp"

namespace gprune::num {

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, same length as data
  bool requires_grad = false;
};

/// Dense row-major double tensor. Value type with shared storage; the
/// tape keeps inputs alive through the backward closures.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  /// gradient buffer, zero-initialized on first access
  std::vector<double>& grad();
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  void zero_grad();

  /// deep copy; grad not copied
  Tensor clone() const;
  /// same data copied into a fresh non-recording tensor
  Tensor detach() const;

  TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<TensorImpl> impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

/// Reverse-mode tape. Constructing a Tape makes it the active recorder
/// (stack discipline); primitive ops push backward closures onto it when
/// any input requires a gradient.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> backward);
  bool recording() const { return enabled_; }
  size_t size() const { return records_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and replays recorded ops in reverse,
  /// accumulating into .grad() of every tensor that requires it.
  void backward(const Tensor& loss);

 private:
  friend struct NoGradGuard;
  std::vector<std::function<void()>> records_;
  Tape* prev_ = nullptr;
  bool enabled_ = true;
};

/// Temporarily disables recording on the active tape (if any).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  Tape* tape_;
  bool was_enabled_;
};

/// True when an op with these inputs should be recorded.
bool grad_enabled();

}  // namespace gprune::num
