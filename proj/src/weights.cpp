#include "gprune/weights.hpp"

#include "gprune/errors.hpp"
#include "gprune/tensor_io.hpp"

namespace gprune::ir {

void save_weights(const ModelIR& m, const std::string& bin_path,
                  const std::string& manifest_path) {
  std::vector<num::NamedTensor> entries;
  for (const auto& l : m.layers) {
    if (l.weight.defined()) entries.push_back({l.id, l.weight});
    if (l.bias.defined()) entries.push_back({l.id + "/bias", l.bias});
    if (l.running_mean.defined())
      entries.push_back({l.id + "/running_mean", l.running_mean});
    if (l.running_var.defined())
      entries.push_back({l.id + "/running_var", l.running_var});
  }
  num::save_named_tensors(entries, bin_path, manifest_path);
}

void load_weights(ModelIR& m, const std::string& bin_path,
                  const std::string& manifest_path) {
  auto entries = num::load_named_tensors(bin_path, manifest_path);
  auto take = [&](const std::string& key, bool requires_grad) {
    auto it = entries.find(key);
    if (it == entries.end())
      throw IoError("weights manifest is missing entry '" + key + "'");
    num::Tensor t = it->second;
    t.set_requires_grad(requires_grad);
    return t;
  };
  for (auto& l : m.layers) {
    if (!kind_has_weights(l.kind)) continue;
    l.weight = take(l.id, true);
    l.bias = take(l.id + "/bias", true);
    if (l.kind == LayerKind::batchnorm) {
      l.running_mean = take(l.id + "/running_mean", false);
      l.running_var = take(l.id + "/running_var", false);
    }
  }
  m.finalize();  // re-validates weight shapes against the IR
}

}  // namespace gprune::ir
