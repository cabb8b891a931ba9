#pragma once

#include <string>

#include "gprune/ir.hpp"

namespace gprune::ir {

/// Sidecar format: raw little-endian float32 buffer plus a JSON manifest
/// mapping entry keys to byte offsets and shapes. Entry keys are the layer
/// id for the main weight and "<id>/bias", "<id>/running_mean",
/// "<id>/running_var" for auxiliary tensors.
void save_weights(const ModelIR& m, const std::string& bin_path,
                  const std::string& manifest_path);

void load_weights(ModelIR& m, const std::string& bin_path,
                  const std::string& manifest_path);

}  // namespace gprune::ir
