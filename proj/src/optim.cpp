#include "gprune/optim.hpp"

#include <cmath>

namespace gprune::num {

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
  if (cfg_.lr <= 0.0) throw Error("optimizer: lr must be > 0");
}

void Optimizer::step(const std::vector<Tensor>& params) {
  for (const Tensor& p : params) {
    Tensor param = p;
    if (!param.defined() || !param.requires_grad()) continue;
    auto& g = param.grad();
    auto& w = param.data();
    Slot& slot = slots_[param.impl()];
    if (slot.m.size() != w.size()) slot.m.assign(w.size(), 0.0);
    if (cfg_.kind == OptKind::adam && slot.v.size() != w.size())
      slot.v.assign(w.size(), 0.0);

    if (cfg_.weight_decay != 0.0)
      for (size_t i = 0; i < w.size(); ++i) g[i] += cfg_.weight_decay * w[i];

    if (cfg_.kind == OptKind::sgd_momentum) {
      for (size_t i = 0; i < w.size(); ++i) {
        slot.m[i] = cfg_.momentum * slot.m[i] + g[i];
        w[i] -= cfg_.lr * slot.m[i];
      }
    } else {
      slot.t += 1;
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(slot.t));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(slot.t));
      for (size_t i = 0; i < w.size(); ++i) {
        slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i];
        slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
    param.zero_grad();
  }
}

}  // namespace gprune::num
