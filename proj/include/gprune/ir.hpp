#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gprune/rng.hpp"
#include "gprune/tensor.hpp"

namespace gprune::ir {

enum class LayerKind {
  conv2d,
  depthwise_conv2d,
  pointwise_conv2d,
  dense,
  maxpool,
  avgpool,
  global_avgpool,
  relu,
  batchnorm,
  add,
  concat,
  channel_shuffle,
  flatten,
};

constexpr int kNumLayerKinds = 13;

const char* kind_name(LayerKind k);
LayerKind kind_from_name(const std::string& name);
bool is_conv_family(LayerKind k);
bool kind_has_weights(LayerKind k);

/// Shape of a layer output. spatial=false after flatten / global pooling /
/// dense, in which case c is the feature count and h = w = 1.
struct TensorShape {
  int c = 0;
  int h = 1;
  int w = 1;
  bool spatial = true;
  bool operator==(const TensorShape&) const = default;
};

struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::relu;
  int in_channels = 0;
  int out_channels = 0;
  std::pair<int, int> kernel{1, 1};
  std::pair<int, int> stride{1, 1};
  std::pair<int, int> padding{0, 0};
  int groups = 1;
  bool prunable = false;
  // explicit document-level override; wins over kind/block defaults but not
  // over hard constraints (shuffle producers, input-tied residual streams)
  std::optional<bool> prunable_override;

  // unpruned channel counts, preserved across apply_policy
  int base_in_channels = 0;
  int base_out_channels = 0;

  // conv/dense: weight+bias; batchnorm: weight=gamma, bias=beta
  num::Tensor weight;
  num::Tensor bias;
  num::Tensor running_mean;
  num::Tensor running_var;

  TensorShape out_shape;

  bool has_weights() const { return weight.defined(); }
};

enum class BlockKind { plain, residual, mobile_v1, mobile_v2, shuffle };

const char* block_kind_name(BlockKind k);
BlockKind block_kind_from_name(const std::string& name);

struct BlockSpec {
  std::string name;
  BlockKind kind = BlockKind::plain;
  std::vector<std::string> layers;
};

struct ModelIR {
  TensorShape input_shape;
  std::vector<LayerSpec> layers;  // stored in topological order after finalize
  std::vector<std::pair<std::string, std::string>> edges;
  std::vector<BlockSpec> blocks;
  std::vector<std::vector<std::string>> share_groups;

  // adjacency in layer-index space; kInputSource marks the model input
  static constexpr int kInputSource = -1;
  std::vector<std::vector<int>> producers;
  std::vector<std::vector<int>> consumers;
  int sink = -1;

  int index_of(const std::string& id) const;
  const LayerSpec& layer(const std::string& id) const;
  LayerSpec& layer(const std::string& id);

  /// Re-derives adjacency, topological order, shapes, strategy flags and
  /// share groups; throws SchemaError/ShapeError/CycleError on violations.
  void finalize();
};

struct PruningPolicy {
  std::map<std::string, double> ratios;
  double a_max = 0.8;
};

struct FlopsReport {
  std::map<std::string, int64_t> per_layer;
  int64_t total = 0;
  int64_t prunable_total = 0;
};

/// One agent-controlled action slot: a share-tied set of prunable layers
/// (singleton when untied), in topological order of the earliest member.
struct ActionSlot {
  std::vector<std::string> layers;
};

ModelIR parse_model(const std::string& text);
ModelIR load_model_file(const std::string& path);
std::string model_to_json(const ModelIR& m);

FlopsReport count_flops(const ModelIR& m);
int64_t count_params(const ModelIR& m);

ModelIR apply_policy(const ModelIR& m, const PruningPolicy& p);

std::vector<ActionSlot> action_slots(const ModelIR& m);
PruningPolicy strategy_ratios(const ModelIR& m, const std::vector<double>& raw,
                              double a_max = 0.8);

/// keep = max(1, round((1 - ratio) * channels))
int kept_channels(int channels, double ratio);

/// Initialize weights for all parameterized layers:
/// uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)); batchnorm gamma=1 beta=0.
void init_weights(ModelIR& m, Rng& rng);

/// All learnable parameter tensors of the model, in layer order. Batchnorm
/// running statistics are excluded (they are buffers, not parameters).
std::vector<num::Tensor> model_parameters(const ModelIR& m);

/// Deep copy including weights.
ModelIR clone_model(const ModelIR& m);

/// Layers whose channel counts differ from the base model (i.e. touched by
/// pruning, directly or passively).
std::vector<std::string> pruned_layer_ids(const ModelIR& m);

}  // namespace gprune::ir
