#pragma once

#include <map>
#include <string>
#include <vector>

#include "gprune/tensor.hpp"

namespace gprune::num {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Writes tensors as a raw little-endian float32 buffer plus a JSON
/// manifest {"entries": {name: {"offset": bytes, "shape": [...]}},
/// "total_bytes": n}. Entry order follows the input list.
void save_named_tensors(const std::vector<NamedTensor>& tensors,
                        const std::string& bin_path,
                        const std::string& manifest_path);

std::map<std::string, Tensor> load_named_tensors(
    const std::string& bin_path, const std::string& manifest_path);

}  // namespace gprune::num
