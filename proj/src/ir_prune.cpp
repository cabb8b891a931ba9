#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "gprune/errors.hpp"
#include "gprune/ir.hpp"

namespace gprune::ir {

namespace {

using Kept = std::vector<int>;  // sorted surviving channel indices

Kept full_set(int n) {
  Kept k(static_cast<size_t>(n));
  std::iota(k.begin(), k.end(), 0);
  return k;
}

bool is_full(const Kept& k, int n) {
  return static_cast<int>(k.size()) == n;
}

/// Squared L2 norm of each output filter of a weighted layer.
std::vector<double> filter_importance(const LayerSpec& l) {
  std::vector<double> imp(static_cast<size_t>(l.out_channels), 0.0);
  const auto& w = l.weight.data();
  const size_t per_filter = w.size() / static_cast<size_t>(l.out_channels);
  for (int o = 0; o < l.out_channels; ++o) {
    double acc = 0.0;
    const double* row = w.data() + static_cast<size_t>(o) * per_filter;
    for (size_t i = 0; i < per_filter; ++i) acc += row[i] * row[i];
    imp[static_cast<size_t>(o)] = acc;
  }
  return imp;
}

/// Select the k most important channels; smallest-importance channels go
/// first. Without weights, the highest-index channels are pruned. Ties keep
/// the lower index.
Kept select_kept(const std::vector<double>* importance, int channels, int keep) {
  std::vector<int> order(static_cast<size_t>(channels));
  std::iota(order.begin(), order.end(), 0);
  if (importance) {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return (*importance)[static_cast<size_t>(a)] > (*importance)[static_cast<size_t>(b)];
    });
  }
  order.resize(static_cast<size_t>(keep));
  std::sort(order.begin(), order.end());
  return order;
}

num::Tensor slice_vector(const num::Tensor& t, const Kept& kept) {
  num::Tensor out = num::Tensor::zeros({static_cast<int>(kept.size())},
                                       t.requires_grad());
  for (size_t i = 0; i < kept.size(); ++i)
    out.data()[i] = t.data()[static_cast<size_t>(kept[i])];
  return out;
}

/// rows picked by `rows`, and within each row the column blocks listed in
/// `cols` (block = inner elements per column index) are kept.
num::Tensor slice_matrix(const num::Tensor& t, const Kept& rows,
                         const Kept& cols, int64_t inner) {
  const int64_t row_stride = static_cast<int64_t>(t.numel()) / t.dim(0);
  std::vector<int> shape = t.shape();
  shape[0] = static_cast<int>(rows.size());
  shape[1] = static_cast<int>(cols.size());
  num::Tensor out = num::Tensor::zeros(shape, t.requires_grad());
  const auto& src = t.data();
  auto& dst = out.data();
  size_t pos = 0;
  for (int r : rows) {
    const double* srow = src.data() + static_cast<size_t>(r) * row_stride;
    for (int c : cols)
      for (int64_t i = 0; i < inner; ++i)
        dst[pos++] = srow[static_cast<size_t>(c) * inner + i];
  }
  return out;
}

void validate_policy(const ModelIR& m, const PruningPolicy& p) {
  if (!(p.a_max > 0.0 && p.a_max < 1.0))
    throw PolicyError("a_max must lie in (0, 1)");
  for (const auto& [id, a] : p.ratios) {
    int idx = m.index_of(id);
    if (idx < 0) throw PolicyError("policy names unknown layer '" + id + "'");
    if (!m.layers[static_cast<size_t>(idx)].prunable)
      throw PolicyError("policy names non-prunable layer '" + id + "'");
    if (a < 0.0 || a > p.a_max)
      throw PolicyError("ratio for '" + id + "' outside [0, a_max]");
  }
  for (const auto& g : m.share_groups) {
    double r0 = -1.0;
    for (const auto& id : g) {
      auto it = p.ratios.find(id);
      const double r = it == p.ratios.end() ? 0.0 : it->second;
      if (r0 < 0.0)
        r0 = r;
      else if (r != r0)
        throw PolicyError("share group ratios diverge at '" + id + "'");
    }
  }
}

}  // namespace

ModelIR apply_policy(const ModelIR& m, const PruningPolicy& p) {
  validate_policy(m, p);
  const size_t n = m.layers.size();

  // group lookup: layer index -> share group index
  std::vector<int> group_of(n, -1);
  for (size_t gi = 0; gi < m.share_groups.size(); ++gi)
    for (const auto& id : m.share_groups[gi])
      group_of[static_cast<size_t>(m.index_of(id))] = static_cast<int>(gi);

  auto ratio_of = [&](const std::string& id) {
    auto it = p.ratios.find(id);
    return it == p.ratios.end() ? 0.0 : it->second;
  };

  // kept output channels per share group, decided jointly over members
  std::vector<Kept> group_kept(m.share_groups.size());
  for (size_t gi = 0; gi < m.share_groups.size(); ++gi) {
    const auto& g = m.share_groups[gi];
    const LayerSpec& first = m.layer(g[0]);
    const double a = ratio_of(g[0]);
    const int keep = kept_channels(first.out_channels, a);
    bool all_weighted = true;
    for (const auto& id : g)
      if (!m.layer(id).has_weights()) all_weighted = false;
    if (all_weighted) {
      std::vector<double> imp(static_cast<size_t>(first.out_channels), 0.0);
      for (const auto& id : g) {
        auto fi = filter_importance(m.layer(id));
        for (size_t i = 0; i < imp.size(); ++i) imp[i] += fi[i];
      }
      group_kept[gi] = select_kept(&imp, first.out_channels, keep);
    } else {
      group_kept[gi] = select_kept(nullptr, first.out_channels, keep);
    }
  }

  // walk in topological order computing the kept set of every output
  std::vector<Kept> kept(n);
  auto kept_of_producer = [&](size_t i, size_t which) -> Kept {
    int pidx = m.producers[i][which];
    if (pidx == ModelIR::kInputSource) return full_set(m.input_shape.c);
    return kept[static_cast<size_t>(pidx)];
  };

  for (size_t i = 0; i < n; ++i) {
    const LayerSpec& l = m.layers[i];
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::pointwise_conv2d: {
        if (group_of[i] >= 0) {
          kept[i] = group_kept[static_cast<size_t>(group_of[i])];
        } else if (l.prunable && ratio_of(l.id) > 0.0) {
          const int keep = kept_channels(l.out_channels, ratio_of(l.id));
          if (l.has_weights()) {
            auto imp = filter_importance(l);
            kept[i] = select_kept(&imp, l.out_channels, keep);
          } else {
            kept[i] = select_kept(nullptr, l.out_channels, keep);
          }
        } else {
          kept[i] = full_set(l.out_channels);
        }
        break;
      }
      case LayerKind::depthwise_conv2d:
        kept[i] = kept_of_producer(i, 0);
        break;
      case LayerKind::dense:
        kept[i] = full_set(l.out_channels);
        break;
      case LayerKind::add: {
        kept[i] = kept_of_producer(i, 0);
        for (size_t k = 1; k < m.producers[i].size(); ++k) {
          const Kept other = kept_of_producer(i, k);
          if (other != kept[i])
            throw PolicyError("add '" + l.id +
                              "' would join mismatched channel sets");
        }
        break;
      }
      case LayerKind::concat: {
        int offset = 0;
        for (size_t k = 0; k < m.producers[i].size(); ++k) {
          const Kept& src = kept_of_producer(i, k);
          for (int c : src) kept[i].push_back(offset + c);
          int pidx = m.producers[i][k];
          offset += pidx == ModelIR::kInputSource
                        ? m.input_shape.c
                        : m.layers[static_cast<size_t>(pidx)].out_channels;
        }
        break;
      }
      case LayerKind::channel_shuffle: {
        const Kept& src = kept_of_producer(i, 0);
        if (!is_full(src, l.in_channels))
          throw PolicyError("channel_shuffle '" + l.id +
                            "' fed by a pruned producer is unsupported");
        kept[i] = full_set(l.out_channels);
        break;
      }
      case LayerKind::flatten: {
        const Kept& src = kept_of_producer(i, 0);
        int pidx = m.producers[i][0];
        const TensorShape ps = pidx == ModelIR::kInputSource
                                   ? m.input_shape
                                   : m.layers[static_cast<size_t>(pidx)].out_shape;
        const int inner = ps.h * ps.w;
        for (int c : src)
          for (int k = 0; k < inner; ++k) kept[i].push_back(c * inner + k);
        break;
      }
      default:  // relu, pools, gap, batchnorm: channels pass through
        kept[i] = kept_of_producer(i, 0);
        break;
    }
  }

  // rebuild the model with sliced weights and updated channel counts
  ModelIR out = clone_model(m);
  for (size_t i = 0; i < n; ++i) {
    const LayerSpec& src = m.layers[i];
    LayerSpec& dst = out.layers[i];
    const Kept& ko = kept[i];
    const Kept ki = kept_of_producer(i, 0);

    switch (src.kind) {
      case LayerKind::conv2d:
      case LayerKind::pointwise_conv2d: {
        dst.out_channels = static_cast<int>(ko.size());
        if (src.has_weights()) {
          const int64_t inner =
              static_cast<int64_t>(src.kernel.first) * src.kernel.second;
          if (src.groups == 1) {
            dst.weight = slice_matrix(src.weight, ko, ki, inner);
          } else {
            // grouped conv with a pruned producer needs balanced groups;
            // each output group keeps its own input group's surviving slice
            const int cig = src.in_channels / src.groups;
            const int cog = src.out_channels / src.groups;
            std::vector<Kept> local(static_cast<size_t>(src.groups));
            for (int c : ki) local[static_cast<size_t>(c / cig)].push_back(c % cig);
            for (int g = 1; g < src.groups; ++g)
              if (local[static_cast<size_t>(g)].size() != local[0].size())
                throw PolicyError("grouped conv '" + src.id +
                                  "' input pruned unevenly across groups");
            if (!is_full(ko, src.out_channels))
              throw PolicyError("pruning grouped conv '" + src.id +
                                "' is unsupported");
            const int new_cig = static_cast<int>(local[0].size());
            dst.weight = num::Tensor::zeros(
                {src.out_channels, new_cig, src.kernel.first, src.kernel.second},
                src.weight.requires_grad());
            const auto& sw = src.weight.data();
            auto& dw = dst.weight.data();
            size_t pos = 0;
            for (int o = 0; o < src.out_channels; ++o) {
              const int g = o / cog;
              for (int c : local[static_cast<size_t>(g)])
                for (int64_t k = 0; k < inner; ++k)
                  dw[pos++] = sw[(static_cast<size_t>(o) * cig + c) * inner + k];
            }
          }
          dst.bias = slice_vector(src.bias, ko);
        }
        break;
      }
      case LayerKind::depthwise_conv2d: {
        dst.out_channels = static_cast<int>(ko.size());
        dst.groups = dst.out_channels;
        if (src.has_weights()) {
          const int64_t inner =
              static_cast<int64_t>(src.kernel.first) * src.kernel.second;
          dst.weight = slice_matrix(src.weight, ko, {0}, inner);
          dst.bias = slice_vector(src.bias, ko);
        }
        break;
      }
      case LayerKind::dense: {
        if (src.has_weights())
          dst.weight = slice_matrix(src.weight, ko, ki, 1);
        break;
      }
      case LayerKind::batchnorm: {
        dst.out_channels = static_cast<int>(ko.size());
        if (src.has_weights()) {
          dst.weight = slice_vector(src.weight, ko);
          dst.bias = slice_vector(src.bias, ko);
          if (src.running_mean.defined())
            dst.running_mean = slice_vector(src.running_mean, ko);
          if (src.running_var.defined())
            dst.running_var = slice_vector(src.running_var, ko);
        }
        break;
      }
      default:
        break;  // channel counts re-derived by finalize()
    }
  }

  // symbolic forward: re-validates shapes, weights and invariants
  out.producers.clear();
  out.consumers.clear();
  out.finalize();
  return out;
}

std::vector<ActionSlot> action_slots(const ModelIR& m) {
  std::vector<ActionSlot> slots;
  std::set<std::string> grouped_done;
  std::map<std::string, const std::vector<std::string>*> group_by_first;
  for (const auto& g : m.share_groups) group_by_first[g[0]] = &g;
  std::set<std::string> in_group;
  for (const auto& g : m.share_groups)
    for (const auto& id : g) in_group.insert(id);

  for (const auto& l : m.layers) {
    if (!l.prunable) continue;
    if (in_group.count(l.id)) {
      auto it = group_by_first.find(l.id);
      if (it == group_by_first.end()) continue;  // not the first member
      slots.push_back({*it->second});
    } else {
      slots.push_back({{l.id}});
    }
  }
  return slots;
}

PruningPolicy strategy_ratios(const ModelIR& m, const std::vector<double>& raw,
                              double a_max) {
  const auto slots = action_slots(m);
  if (raw.size() != slots.size())
    throw StrategyError("expected " + std::to_string(slots.size()) +
                        " action entries, got " + std::to_string(raw.size()));
  PruningPolicy p;
  p.a_max = a_max;
  for (size_t i = 0; i < slots.size(); ++i)
    for (const auto& id : slots[i].layers) p.ratios[id] = raw[i];
  return p;
}

}  // namespace gprune::ir
