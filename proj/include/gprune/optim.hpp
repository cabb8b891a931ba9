#pragma once

#include <unordered_map>
#include <vector>

#include "gprune/tensor.hpp"

namespace gprune::num {

enum class OptKind { sgd_momentum, adam };

struct OptimizerConfig {
  OptKind kind = OptKind::sgd_momentum;
  double lr = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// SGD-with-momentum / Adam over an explicit parameter list. step() applies
/// the update and zeroes the consumed gradients. Slot state is keyed by the
/// parameter's storage identity, so the same optimizer instance can serve a
/// stable parameter set across many steps.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  void step(const std::vector<Tensor>& params);
  const OptimizerConfig& config() const { return cfg_; }

 private:
  struct Slot {
    std::vector<double> m;  // momentum / first moment
    std::vector<double> v;  // second moment (adam)
    int64_t t = 0;
  };
  OptimizerConfig cfg_;
  std::unordered_map<TensorImpl*, Slot> slots_;
};

}  // namespace gprune::num
