#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gprune/errors.hpp"
#include "gprune/ir.hpp"
#include "gprune/ops.hpp"

namespace gprune::ir {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

struct KindInfo {
  LayerKind kind;
  const char* name;
};

constexpr KindInfo kKinds[] = {
    {LayerKind::conv2d, "conv2d"},
    {LayerKind::depthwise_conv2d, "depthwise_conv2d"},
    {LayerKind::pointwise_conv2d, "pointwise_conv2d"},
    {LayerKind::dense, "dense"},
    {LayerKind::maxpool, "maxpool"},
    {LayerKind::avgpool, "avgpool"},
    {LayerKind::global_avgpool, "global_avgpool"},
    {LayerKind::relu, "relu"},
    {LayerKind::batchnorm, "batchnorm"},
    {LayerKind::add, "add"},
    {LayerKind::concat, "concat"},
    {LayerKind::channel_shuffle, "channel_shuffle"},
    {LayerKind::flatten, "flatten"},
};

}  // namespace

const char* kind_name(LayerKind k) {
  for (const auto& e : kKinds)
    if (e.kind == k) return e.name;
  return "?";
}

LayerKind kind_from_name(const std::string& name) {
  for (const auto& e : kKinds)
    if (name == e.name) return e.kind;
  throw SchemaError("unknown layer kind '" + name + "'");
}

bool is_conv_family(LayerKind k) {
  return k == LayerKind::conv2d || k == LayerKind::depthwise_conv2d ||
         k == LayerKind::pointwise_conv2d;
}

bool kind_has_weights(LayerKind k) {
  return is_conv_family(k) || k == LayerKind::dense ||
         k == LayerKind::batchnorm;
}

const char* block_kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::plain: return "plain";
    case BlockKind::residual: return "residual";
    case BlockKind::mobile_v1: return "mobile_v1";
    case BlockKind::mobile_v2: return "mobile_v2";
    case BlockKind::shuffle: return "shuffle";
  }
  return "?";
}

BlockKind block_kind_from_name(const std::string& name) {
  if (name == "plain") return BlockKind::plain;
  if (name == "residual") return BlockKind::residual;
  if (name == "mobile_v1") return BlockKind::mobile_v1;
  if (name == "mobile_v2") return BlockKind::mobile_v2;
  if (name == "shuffle") return BlockKind::shuffle;
  throw SchemaError("unknown block kind '" + name + "'");
}

int ModelIR::index_of(const std::string& id) const {
  for (size_t i = 0; i < layers.size(); ++i)
    if (layers[i].id == id) return static_cast<int>(i);
  return -1;
}

const LayerSpec& ModelIR::layer(const std::string& id) const {
  int i = index_of(id);
  if (i < 0) throw SchemaError("no layer with id '" + id + "'");
  return layers[static_cast<size_t>(i)];
}

LayerSpec& ModelIR::layer(const std::string& id) {
  int i = index_of(id);
  if (i < 0) throw SchemaError("no layer with id '" + id + "'");
  return layers[static_cast<size_t>(i)];
}

namespace {

bool default_prunable(LayerKind k) {
  // depthwise follows its producer; dense holds the classifier head
  return k == LayerKind::conv2d || k == LayerKind::pointwise_conv2d;
}

// Channel-defining sources of the tensor a layer produces: walks back
// through per-channel pass-through ops. kInputSource stands for the model
// input; concat defines its own channel space.
void trace_sources(const ModelIR& m, int idx, std::set<int>& out) {
  if (idx == ModelIR::kInputSource) {
    out.insert(ModelIR::kInputSource);
    return;
  }
  const LayerSpec& l = m.layers[static_cast<size_t>(idx)];
  switch (l.kind) {
    case LayerKind::conv2d:
    case LayerKind::depthwise_conv2d:
    case LayerKind::pointwise_conv2d:
    case LayerKind::dense:
    case LayerKind::concat:
      out.insert(idx);
      return;
    case LayerKind::add:
      for (int p : m.producers[static_cast<size_t>(idx)]) trace_sources(m, p, out);
      return;
    default:
      // relu/bn/pool/gap/shuffle/flatten keep the producer's channels
      for (int p : m.producers[static_cast<size_t>(idx)]) trace_sources(m, p, out);
      return;
  }
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(size_t n) : parent(n) {
    for (size_t i = 0; i < n; ++i) parent[i] = static_cast<int>(i);
  }
  int find(int x) {
    while (parent[static_cast<size_t>(x)] != x) {
      parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
      x = parent[static_cast<size_t>(x)];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<size_t>(std::max(a, b))] = std::min(a, b);
  }
};

TensorShape infer_shape(LayerSpec& l,
                        const std::vector<TensorShape>& in_shapes) {
  auto require_single = [&](const char* what) {
    if (in_shapes.size() != 1)
      throw SchemaError(std::string(what) + " layer '" + l.id +
                        "' must have exactly one input");
  };
  switch (l.kind) {
    case LayerKind::conv2d:
    case LayerKind::depthwise_conv2d:
    case LayerKind::pointwise_conv2d: {
      require_single("conv");
      const TensorShape& s = in_shapes[0];
      if (!s.spatial)
        throw ShapeError("conv layer '" + l.id + "' needs a spatial input");
      l.in_channels = s.c;
      if (l.kind == LayerKind::depthwise_conv2d) {
        if (l.out_channels != 0 && l.out_channels != s.c)
          throw ShapeError("depthwise layer '" + l.id +
                           "' must keep channel count");
        l.out_channels = s.c;
        l.groups = s.c;
      }
      if (l.kind == LayerKind::pointwise_conv2d &&
          (l.kernel.first != 1 || l.kernel.second != 1))
        throw SchemaError("pointwise layer '" + l.id + "' must use 1x1 kernel");
      if (l.out_channels < 1)
        throw SchemaError("conv layer '" + l.id + "' needs out_channels >= 1");
      if (l.groups < 1 || l.in_channels % l.groups != 0 ||
          l.out_channels % l.groups != 0)
        throw ShapeError("conv layer '" + l.id +
                         "': groups must divide in and out channels");
      const auto d = num::conv2d_out_dims(s.h, s.w, l.kernel.first,
                                          l.kernel.second, l.stride.first,
                                          l.stride.second, l.padding.first,
                                          l.padding.second);
      if (d.out_h < 1 || d.out_w < 1)
        throw ShapeError("conv layer '" + l.id + "' output collapses to zero");
      return {l.out_channels, d.out_h, d.out_w, true};
    }
    case LayerKind::dense: {
      require_single("dense");
      const TensorShape& s = in_shapes[0];
      if (s.spatial)
        throw ShapeError("dense layer '" + l.id +
                         "' needs a flattened input (use flatten/global_avgpool)");
      l.in_channels = s.c;
      if (l.out_channels < 1)
        throw SchemaError("dense layer '" + l.id + "' needs out_channels >= 1");
      return {l.out_channels, 1, 1, false};
    }
    case LayerKind::maxpool:
    case LayerKind::avgpool: {
      require_single("pool");
      const TensorShape& s = in_shapes[0];
      if (!s.spatial)
        throw ShapeError("pool layer '" + l.id + "' needs a spatial input");
      l.in_channels = l.out_channels = s.c;
      const auto d = num::conv2d_out_dims(s.h, s.w, l.kernel.first,
                                          l.kernel.second, l.stride.first,
                                          l.stride.second, l.padding.first,
                                          l.padding.second);
      if (d.out_h < 1 || d.out_w < 1)
        throw ShapeError("pool layer '" + l.id + "' output collapses to zero");
      return {s.c, d.out_h, d.out_w, true};
    }
    case LayerKind::global_avgpool: {
      require_single("global_avgpool");
      const TensorShape& s = in_shapes[0];
      if (!s.spatial)
        throw ShapeError("global_avgpool '" + l.id + "' needs a spatial input");
      l.in_channels = l.out_channels = s.c;
      return {s.c, 1, 1, false};
    }
    case LayerKind::relu: {
      require_single("relu");
      l.in_channels = l.out_channels = in_shapes[0].c;
      return in_shapes[0];
    }
    case LayerKind::batchnorm: {
      require_single("batchnorm");
      l.in_channels = l.out_channels = in_shapes[0].c;
      return in_shapes[0];
    }
    case LayerKind::add: {
      if (in_shapes.size() < 2)
        throw SchemaError("add layer '" + l.id + "' needs >= 2 inputs");
      for (const auto& s : in_shapes)
        if (!(s == in_shapes[0]))
          throw ShapeError("add layer '" + l.id + "' has mismatched inputs");
      l.in_channels = l.out_channels = in_shapes[0].c;
      return in_shapes[0];
    }
    case LayerKind::concat: {
      if (in_shapes.size() < 2)
        throw SchemaError("concat layer '" + l.id + "' needs >= 2 inputs");
      int c = 0;
      for (const auto& s : in_shapes) {
        if (s.spatial != in_shapes[0].spatial || s.h != in_shapes[0].h ||
            s.w != in_shapes[0].w)
          throw ShapeError("concat layer '" + l.id + "' spatial mismatch");
        c += s.c;
      }
      l.in_channels = l.out_channels = c;
      TensorShape out = in_shapes[0];
      out.c = c;
      return out;
    }
    case LayerKind::channel_shuffle: {
      require_single("channel_shuffle");
      const TensorShape& s = in_shapes[0];
      if (!s.spatial)
        throw ShapeError("channel_shuffle '" + l.id + "' needs spatial input");
      if (l.groups < 1 || s.c % l.groups != 0)
        throw ShapeError("channel_shuffle '" + l.id +
                         "': channels not divisible by groups");
      l.in_channels = l.out_channels = s.c;
      return s;
    }
    case LayerKind::flatten: {
      require_single("flatten");
      const TensorShape& s = in_shapes[0];
      const int feat = s.c * s.h * s.w;
      l.in_channels = s.c;
      l.out_channels = feat;
      return {feat, 1, 1, false};
    }
  }
  throw SchemaError("unhandled layer kind");
}

void validate_weight_shapes(const LayerSpec& l) {
  if (!l.weight.defined()) return;
  std::vector<int> want;
  switch (l.kind) {
    case LayerKind::conv2d:
    case LayerKind::depthwise_conv2d:
    case LayerKind::pointwise_conv2d:
      want = {l.out_channels, l.in_channels / l.groups, l.kernel.first,
              l.kernel.second};
      break;
    case LayerKind::dense:
      want = {l.out_channels, l.in_channels};
      break;
    case LayerKind::batchnorm:
      want = {l.out_channels};
      break;
    default:
      return;
  }
  if (l.weight.shape() != want)
    throw ShapeError("layer '" + l.id + "' weight shape " +
                     num::shape_str(l.weight.shape()) + " does not match " +
                     num::shape_str(want));
}

}  // namespace

void ModelIR::finalize() {
  const size_t n = layers.size();
  if (n == 0) throw SchemaError("model has no layers");
  if (input_shape.c < 1 || input_shape.h < 1 || input_shape.w < 1)
    throw SchemaError("bad input_shape");

  // unique ids
  {
    std::set<std::string> ids;
    for (const auto& l : layers)
      if (!ids.insert(l.id).second)
        throw SchemaError("duplicate layer id '" + l.id + "'");
  }
  for (const auto& e : edges) {
    if (index_of(e.first) < 0 || index_of(e.second) < 0)
      throw SchemaError("edge references unknown layer '" + e.first + "'->'" +
                        e.second + "'");
    if (e.first == e.second) throw CycleError("self-loop on '" + e.first + "'");
  }

  // topological order, stable in declaration order
  {
    std::vector<int> indeg(n, 0);
    std::vector<std::vector<int>> cons(n);
    for (const auto& e : edges) {
      int a = index_of(e.first), b = index_of(e.second);
      cons[static_cast<size_t>(a)].push_back(b);
      indeg[static_cast<size_t>(b)]++;
    }
    std::vector<bool> emitted(n, false);
    std::vector<LayerSpec> order;
    order.reserve(n);
    for (size_t produced = 0; produced < n;) {
      bool progress = false;
      for (size_t i = 0; i < n; ++i) {
        if (emitted[i] || indeg[i] != 0) continue;
        emitted[i] = true;
        order.push_back(std::move(layers[i]));
        for (int c : cons[i]) indeg[static_cast<size_t>(c)]--;
        ++produced;
        progress = true;
      }
      if (!progress) throw CycleError("dataflow edges contain a cycle");
    }
    layers = std::move(order);
  }

  // adjacency in the new order; producers keep declared edge order so that
  // add/concat input order is well defined
  producers.assign(n, {});
  consumers.assign(n, {});
  for (const auto& e : edges) {
    int a = index_of(e.first), b = index_of(e.second);
    producers[static_cast<size_t>(b)].push_back(a);
    consumers[static_cast<size_t>(a)].push_back(b);
  }
  for (size_t i = 0; i < n; ++i)
    if (producers[i].empty()) producers[i].push_back(kInputSource);

  sink = -1;
  for (size_t i = 0; i < n; ++i) {
    if (consumers[i].empty()) {
      if (sink >= 0)
        throw SchemaError("model must have exactly one output layer, found '" +
                          layers[static_cast<size_t>(sink)].id + "' and '" + layers[i].id + "'");
      sink = static_cast<int>(i);
    }
  }
  if (sink < 0) throw SchemaError("model has no output layer");

  // shape inference in topo order
  for (size_t i = 0; i < n; ++i) {
    std::vector<TensorShape> ins;
    for (int p : producers[i])
      ins.push_back(p == kInputSource ? input_shape
                                      : layers[static_cast<size_t>(p)].out_shape);
    layers[i].out_shape = infer_shape(layers[i], ins);
    if (layers[i].base_in_channels == 0)
      layers[i].base_in_channels = layers[i].in_channels;
    if (layers[i].base_out_channels == 0)
      layers[i].base_out_channels = layers[i].out_channels;
    validate_weight_shapes(layers[i]);
  }

  // blocks: every id exists, no layer in two blocks
  {
    std::set<std::string> seen;
    for (const auto& b : blocks) {
      for (const auto& id : b.layers) {
        if (index_of(id) < 0)
          throw SchemaError("block '" + b.name + "' references unknown layer '" +
                            id + "'");
        if (!seen.insert(id).second)
          throw SchemaError("layer '" + id + "' appears in two blocks");
      }
    }
  }

  // ---- strategy flags -------------------------------------------------
  // default by kind, then per-block rules, then hard constraints
  std::vector<bool> prunable(n);
  for (size_t i = 0; i < n; ++i) prunable[i] = default_prunable(layers[i].kind);

  std::vector<int> block_of(n, -1);
  for (size_t bi = 0; bi < blocks.size(); ++bi)
    for (const auto& id : blocks[bi].layers)
      block_of[static_cast<size_t>(index_of(id))] = static_cast<int>(bi);

  UnionFind uf(n);
  std::vector<bool> forced_off(n, false);

  for (size_t bi = 0; bi < blocks.size(); ++bi) {
    const BlockSpec& b = blocks[bi];
    std::vector<int> members;
    for (const auto& id : b.layers) members.push_back(index_of(id));
    switch (b.kind) {
      case BlockKind::plain:
      case BlockKind::residual:
        break;
      case BlockKind::mobile_v1:
        for (int li : members)
          if (layers[static_cast<size_t>(li)].kind != LayerKind::pointwise_conv2d)
            prunable[static_cast<size_t>(li)] = false;
        break;
      case BlockKind::mobile_v2: {
        // last pointwise conv in the block is the linear projection; all
        // such layers across mobile_v2 blocks share one pruning ratio
        int linear = -1;
        for (int li : members) {
          if (layers[static_cast<size_t>(li)].kind == LayerKind::pointwise_conv2d)
            linear = std::max(linear, li);
          else if (is_conv_family(layers[static_cast<size_t>(li)].kind))
            prunable[static_cast<size_t>(li)] =
                layers[static_cast<size_t>(li)].kind == LayerKind::pointwise_conv2d;
        }
        if (linear >= 0) {
          // tie with the linear layer of every previous mobile_v2 block
          for (size_t bj = 0; bj < bi; ++bj) {
            if (blocks[bj].kind != BlockKind::mobile_v2) continue;
            int other = -1;
            for (const auto& id : blocks[bj].layers) {
              int lj = index_of(id);
              if (layers[static_cast<size_t>(lj)].kind == LayerKind::pointwise_conv2d)
                other = std::max(other, lj);
            }
            if (other >= 0) uf.unite(linear, other);
          }
        }
        break;
      }
      case BlockKind::shuffle: {
        // exclude the block output layer(s): members with consumers outside
        for (int li : members) {
          bool outside = consumers[static_cast<size_t>(li)].empty();
          for (int c : consumers[static_cast<size_t>(li)])
            if (block_of[static_cast<size_t>(c)] != static_cast<int>(bi)) outside = true;
          if (outside) {
            std::set<int> srcs;
            trace_sources(*this, li, srcs);
            for (int s : srcs)
              if (s >= 0) forced_off[static_cast<size_t>(s)] = true;
          }
        }
        break;
      }
    }
  }

  // pruning a channel_shuffle producer is unsupported (the permutation has
  // no defined restriction to arbitrary kept sets)
  for (size_t i = 0; i < n; ++i) {
    if (layers[i].kind != LayerKind::channel_shuffle) continue;
    std::set<int> srcs;
    for (int p : producers[i]) trace_sources(*this, p, srcs);
    for (int s : srcs)
      if (s >= 0) forced_off[static_cast<size_t>(s)] = true;
  }

  // explicit per-layer overrides from the document, then hard constraints:
  // the action space is convolutional channel pruning only
  for (size_t i = 0; i < n; ++i) {
    if (layers[i].prunable_override.has_value())
      prunable[i] = *layers[i].prunable_override;
    if (forced_off[i]) prunable[i] = false;
    if (!is_conv_family(layers[i].kind)) prunable[i] = false;
    // depthwise channels always follow the producer
    if (layers[i].kind == LayerKind::depthwise_conv2d) prunable[i] = false;
    // grouped filters have no defined restriction to arbitrary kept sets
    if (layers[i].groups > 1 && layers[i].kind != LayerKind::depthwise_conv2d)
      prunable[i] = false;
  }

  // ---- share groups ----------------------------------------------------
  // declared groups
  for (const auto& g : share_groups) {
    if (g.size() < 2) continue;
    int first = index_of(g[0]);
    if (first < 0) throw SchemaError("share group references unknown layer");
    for (size_t k = 1; k < g.size(); ++k) {
      int li = index_of(g[static_cast<size_t>(k)]);
      if (li < 0) throw SchemaError("share group references unknown layer");
      uf.unite(first, li);
    }
  }
  // inferred: producers joined by an add must keep identical channel sets
  for (size_t i = 0; i < n; ++i) {
    if (layers[i].kind != LayerKind::add) continue;
    std::set<int> srcs;
    trace_sources(*this, static_cast<int>(i), srcs);
    int first = -1;
    bool has_fixed = srcs.count(kInputSource) > 0;
    for (int s : srcs) {
      if (s < 0) continue;
      if (!prunable[static_cast<size_t>(s)]) has_fixed = true;
      if (first < 0)
        first = s;
      else
        uf.unite(first, s);
    }
    if (has_fixed)
      for (int s : srcs)
        if (s >= 0) forced_off[static_cast<size_t>(s)] = true;
  }

  // a group containing any non-prunable member pins the whole group
  for (size_t i = 0; i < n; ++i) {
    if (forced_off[i] || !prunable[i]) {
      int r = uf.find(static_cast<int>(i));
      for (size_t j = 0; j < n; ++j)
        if (uf.find(static_cast<int>(j)) == r) forced_off[j] = true;
    }
  }
  for (size_t i = 0; i < n; ++i) {
    if (forced_off[i]) prunable[i] = false;
    layers[i].prunable = prunable[i];
  }

  // canonical stored groups: classes with >= 2 prunable members
  {
    std::map<int, std::vector<std::string>> classes;
    for (size_t i = 0; i < n; ++i)
      if (layers[i].prunable)
        classes[uf.find(static_cast<int>(i))].push_back(layers[i].id);
    share_groups.clear();
    for (auto& [root, ids] : classes)
      if (ids.size() >= 2) share_groups.push_back(std::move(ids));
  }
  for (const auto& g : share_groups) {
    int c0 = layer(g[0]).out_channels;
    for (const auto& id : g)
      if (layer(id).out_channels != c0)
        throw ShapeError("share group members disagree on out_channels");
  }
}

// ---------------------------------------------------------------------------
// JSON round trip
// ---------------------------------------------------------------------------

namespace {

std::pair<int, int> parse_pair(const json& j, const char* field) {
  if (j.is_number_integer()) return {j.get<int>(), j.get<int>()};
  if (j.is_array() && j.size() == 2)
    return {j[0].get<int>(), j[1].get<int>()};
  throw SchemaError(std::string("field '") + field +
                    "' must be an int or [h,w] pair");
}

}  // namespace

ModelIR parse_model(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed model document: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("model document must be an object");

  ModelIR m;
  try {
    if (!doc.contains("input_shape") || !doc["input_shape"].is_array() ||
        doc["input_shape"].size() != 3)
      throw SchemaError("input_shape must be [channels, h, w]");
    m.input_shape = {doc["input_shape"][0].get<int>(),
                     doc["input_shape"][1].get<int>(),
                     doc["input_shape"][2].get<int>(), true};

    if (!doc.contains("layers") || !doc["layers"].is_array())
      throw SchemaError("missing 'layers' array");
    for (const auto& jl : doc["layers"]) {
      LayerSpec l;
      if (!jl.contains("id") || !jl.contains("kind"))
        throw SchemaError("every layer needs 'id' and 'kind'");
      l.id = jl["id"].get<std::string>();
      l.kind = kind_from_name(jl["kind"].get<std::string>());
      if (jl.contains("out_channels")) l.out_channels = jl["out_channels"].get<int>();
      if (l.kind == LayerKind::pointwise_conv2d) l.kernel = {1, 1};
      if (jl.contains("kernel")) l.kernel = parse_pair(jl["kernel"], "kernel");
      if (jl.contains("stride")) l.stride = parse_pair(jl["stride"], "stride");
      if (jl.contains("padding")) l.padding = parse_pair(jl["padding"], "padding");
      if (jl.contains("groups")) l.groups = jl["groups"].get<int>();
      if (jl.contains("prunable")) l.prunable_override = jl["prunable"].get<bool>();
      if (jl.contains("base_in_channels"))
        l.base_in_channels = jl["base_in_channels"].get<int>();
      if (jl.contains("base_out_channels"))
        l.base_out_channels = jl["base_out_channels"].get<int>();
      if ((l.kind == LayerKind::maxpool || l.kind == LayerKind::avgpool) &&
          !jl.contains("stride"))
        l.stride = l.kernel;  // pools default to non-overlapping windows
      m.layers.push_back(std::move(l));
    }

    if (doc.contains("edges"))
      for (const auto& je : doc["edges"]) {
        if (!je.is_array() || je.size() != 2)
          throw SchemaError("edges must be [from, to] pairs");
        m.edges.emplace_back(je[0].get<std::string>(), je[1].get<std::string>());
      }

    if (doc.contains("blocks"))
      for (const auto& jb : doc["blocks"]) {
        BlockSpec b;
        b.name = jb.value("name", "block" + std::to_string(m.blocks.size()));
        b.kind = block_kind_from_name(jb.value("kind", "plain"));
        if (!jb.contains("layers") || !jb["layers"].is_array())
          throw SchemaError("block '" + b.name + "' needs a 'layers' array");
        for (const auto& id : jb["layers"]) b.layers.push_back(id.get<std::string>());
        m.blocks.push_back(std::move(b));
      }

    if (doc.contains("share_groups"))
      for (const auto& jg : doc["share_groups"]) {
        std::vector<std::string> g;
        for (const auto& id : jg) g.push_back(id.get<std::string>());
        m.share_groups.push_back(std::move(g));
      }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed model document: ") + e.what());
  }

  m.finalize();
  return m;
}

std::string model_to_json(const ModelIR& m) {
  ojson doc;
  doc["input_shape"] = {m.input_shape.c, m.input_shape.h, m.input_shape.w};
  doc["layers"] = ojson::array();
  for (const auto& l : m.layers) {
    ojson jl;
    jl["id"] = l.id;
    jl["kind"] = kind_name(l.kind);
    if (is_conv_family(l.kind) || l.kind == LayerKind::dense)
      jl["out_channels"] = l.out_channels;
    if (is_conv_family(l.kind) || l.kind == LayerKind::maxpool ||
        l.kind == LayerKind::avgpool) {
      jl["kernel"] = {l.kernel.first, l.kernel.second};
      jl["stride"] = {l.stride.first, l.stride.second};
      jl["padding"] = {l.padding.first, l.padding.second};
    }
    if (l.groups != 1 || l.kind == LayerKind::channel_shuffle)
      jl["groups"] = l.groups;
    jl["prunable"] = l.prunable;
    jl["base_in_channels"] = l.base_in_channels;
    jl["base_out_channels"] = l.base_out_channels;
    doc["layers"].push_back(std::move(jl));
  }
  doc["edges"] = ojson::array();
  for (const auto& e : m.edges) doc["edges"].push_back({e.first, e.second});
  doc["blocks"] = ojson::array();
  for (const auto& b : m.blocks) {
    ojson jb;
    jb["name"] = b.name;
    jb["kind"] = block_kind_name(b.kind);
    jb["layers"] = b.layers;
    doc["blocks"].push_back(std::move(jb));
  }
  doc["share_groups"] = m.share_groups;
  return doc.dump(2) + "\n";
}

ModelIR load_model_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open model file '" + path + "'");
  std::string text;
  char buf[4096];
  size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
  std::fclose(f);
  return parse_model(text);
}

// ---------------------------------------------------------------------------
// FLOPs and parameters
// ---------------------------------------------------------------------------

FlopsReport count_flops(const ModelIR& m) {
  FlopsReport r;
  for (const auto& l : m.layers) {
    int64_t f = 0;
    if (is_conv_family(l.kind)) {
      f = 2LL * l.kernel.first * l.kernel.second *
          (static_cast<int64_t>(l.in_channels) / l.groups) * l.out_channels *
          l.out_shape.h * l.out_shape.w;
    } else if (l.kind == LayerKind::dense) {
      f = 2LL * l.in_channels * l.out_channels;
    }
    r.per_layer[l.id] = f;
    r.total += f;
    if (l.prunable) r.prunable_total += f;
  }
  return r;
}

int64_t count_params(const ModelIR& m) {
  int64_t n = 0;
  for (const auto& l : m.layers) {
    if (is_conv_family(l.kind)) {
      n += static_cast<int64_t>(l.out_channels) * (l.in_channels / l.groups) *
           l.kernel.first * l.kernel.second;
      n += l.out_channels;  // bias
    } else if (l.kind == LayerKind::dense) {
      n += static_cast<int64_t>(l.out_channels) * l.in_channels + l.out_channels;
    } else if (l.kind == LayerKind::batchnorm) {
      n += 2LL * l.out_channels;
    }
  }
  return n;
}

int kept_channels(int channels, double ratio) {
  int keep = static_cast<int>(std::lround((1.0 - ratio) * channels));
  return std::max(1, keep);
}

// ---------------------------------------------------------------------------
// weights / parameters
// ---------------------------------------------------------------------------

void init_weights(ModelIR& m, Rng& rng) {
  for (auto& l : m.layers) {
    if (is_conv_family(l.kind)) {
      const int fan_in = (l.in_channels / l.groups) * l.kernel.first * l.kernel.second;
      const double bound = std::sqrt(1.0 / fan_in);
      l.weight = num::Tensor::zeros(
          {l.out_channels, l.in_channels / l.groups, l.kernel.first, l.kernel.second},
          true);
      for (auto& v : l.weight.data()) v = rng.uniform(-bound, bound);
      l.bias = num::Tensor::zeros({l.out_channels}, true);
      for (auto& v : l.bias.data()) v = rng.uniform(-bound, bound);
    } else if (l.kind == LayerKind::dense) {
      const double bound = std::sqrt(1.0 / l.in_channels);
      l.weight = num::Tensor::zeros({l.out_channels, l.in_channels}, true);
      for (auto& v : l.weight.data()) v = rng.uniform(-bound, bound);
      l.bias = num::Tensor::zeros({l.out_channels}, true);
      for (auto& v : l.bias.data()) v = rng.uniform(-bound, bound);
    } else if (l.kind == LayerKind::batchnorm) {
      l.weight = num::Tensor::full({l.out_channels}, 1.0, true);
      l.bias = num::Tensor::zeros({l.out_channels}, true);
      l.running_mean = num::Tensor::zeros({l.out_channels});
      l.running_var = num::Tensor::full({l.out_channels}, 1.0);
    }
  }
}

std::vector<num::Tensor> model_parameters(const ModelIR& m) {
  std::vector<num::Tensor> params;
  for (const auto& l : m.layers) {
    if (l.weight.defined()) params.push_back(l.weight);
    if (l.bias.defined()) params.push_back(l.bias);
  }
  return params;
}

ModelIR clone_model(const ModelIR& m) {
  ModelIR c = m;  // copies specs and shared tensor handles
  for (auto& l : c.layers) {
    if (l.weight.defined()) l.weight = l.weight.clone();
    if (l.bias.defined()) l.bias = l.bias.clone();
    if (l.running_mean.defined()) l.running_mean = l.running_mean.clone();
    if (l.running_var.defined()) l.running_var = l.running_var.clone();
  }
  return c;
}

std::vector<std::string> pruned_layer_ids(const ModelIR& m) {
  std::vector<std::string> out;
  for (const auto& l : m.layers)
    if (l.in_channels != l.base_in_channels ||
        l.out_channels != l.base_out_channels)
      out.push_back(l.id);
  return out;
}

}  // namespace gprune::ir
