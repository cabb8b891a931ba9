#include "gprune/mgnn.hpp"

#include <cmath>

#include "gprune/errors.hpp"
#include "gprune/ops.hpp"

namespace gprune::mgnn {

namespace {

num::Tensor uniform_init(std::vector<int> shape, int fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / fan_in);
  num::Tensor t = num::Tensor::zeros(std::move(shape), true);
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

StageParams::StageParams(MgnnConfig config, int num_primitives, Rng& rng)
    : cfg(config) {
  const int h = cfg.hidden_dim;
  prim_embed = uniform_init({num_primitives, h}, num_primitives, rng);
  for (int r = 0; r < cfg.num_message_rounds; ++r)
    w_motif.push_back(uniform_init({h, h}, h, rng));
  for (int r = 0; r < cfg.num_message_rounds; ++r)
    w_top.push_back(uniform_init({h, h}, h, rng));
  attr_proj_motif = uniform_init({hg::kLevel1AttrDim, h}, hg::kLevel1AttrDim, rng);
  attr_proj_top = uniform_init({hg::kLevel2AttrDim, h}, hg::kLevel2AttrDim, rng);
}

num::Tensor& StageParams::alpha_for(int level, int node_count) {
  auto key = std::make_pair(level, node_count);
  auto it = alpha_.find(key);
  if (it == alpha_.end()) {
    it = alpha_.emplace(key, num::Tensor::full({1, node_count}, 1.0, true)).first;
  }
  return it->second;
}

std::vector<num::Tensor> StageParams::parameters() const {
  std::vector<num::Tensor> ps;
  for (const auto& [name, t] : named_parameters()) ps.push_back(t);
  return ps;
}

std::vector<std::pair<std::string, num::Tensor>> StageParams::named_parameters()
    const {
  std::vector<std::pair<std::string, num::Tensor>> ps;
  ps.emplace_back("prim_embed", prim_embed);
  for (size_t r = 0; r < w_motif.size(); ++r)
    ps.emplace_back("w_motif." + std::to_string(r), w_motif[r]);
  for (size_t r = 0; r < w_top.size(); ++r)
    ps.emplace_back("w_top." + std::to_string(r), w_top[r]);
  ps.emplace_back("attr_proj_motif", attr_proj_motif);
  ps.emplace_back("attr_proj_top", attr_proj_top);
  for (const auto& [key, t] : alpha_)
    ps.emplace_back("alpha." + std::to_string(key.first) + "." +
                        std::to_string(key.second),
                    t);
  return ps;
}

StageParams StageParams::clone() const {
  StageParams c;
  c.cfg = cfg;
  c.prim_embed = prim_embed.clone();
  for (const auto& w : w_motif) c.w_motif.push_back(w.clone());
  for (const auto& w : w_top) c.w_top.push_back(w.clone());
  c.attr_proj_motif = attr_proj_motif.clone();
  c.attr_proj_top = attr_proj_top.clone();
  for (const auto& [key, t] : alpha_) c.alpha_.emplace(key, t.clone());
  return c;
}

num::Tensor message_pass(const hg::CompGraph& g, const num::Tensor& h,
                         const num::Tensor& edge_feats, const num::Tensor& w) {
  if (h.ndim() != 2 || h.dim(0) != g.num_nodes)
    throw DimError("message_pass: node state shape mismatch");
  const int hidden = h.dim(1);
  if (edge_feats.ndim() != 2 ||
      edge_feats.dim(0) != static_cast<int>(g.edges.size()) ||
      edge_feats.dim(1) != hidden)
    throw DimError("message_pass: edge feature shape mismatch");
  if (w.ndim() != 2 || w.dim(0) != hidden || w.dim(1) != hidden)
    throw DimError("message_pass: weight shape mismatch");

  std::vector<int> src_ids, dst_ids;
  src_ids.reserve(g.edges.size());
  dst_ids.reserve(g.edges.size());
  for (const auto& e : g.edges) {
    src_ids.push_back(e.src);
    dst_ids.push_back(e.dst);
  }
  const auto indeg = g.in_degrees();
  std::vector<double> inv_c(static_cast<size_t>(g.num_nodes));
  for (int v = 0; v < g.num_nodes; ++v)
    inv_c[static_cast<size_t>(v)] = 1.0 / std::max(1, indeg[static_cast<size_t>(v)]);

  num::Tensor hsrc = num::gather_rows(h, src_ids);
  num::Tensor gated = num::mul(hsrc, edge_feats);
  num::Tensor msg = num::matmul(gated, w);
  num::Tensor agg = num::scatter_add_rows(msg, dst_ids, g.num_nodes);
  return num::relu(num::scale_rows(agg, inv_c));
}

num::Tensor pool(const num::Tensor& h, const num::Tensor& alpha) {
  if (alpha.ndim() != 2 || alpha.dim(0) != 1 || alpha.dim(1) != h.dim(0))
    throw DimError("pool: alpha must be (1, node_count)");
  return num::matmul(alpha, h);
}

namespace {

/// Edge features of one graph: base features gathered by edge type, gated
/// by (1 + projected attributes) so that all-zero attributes leave the base
/// features untouched.
num::Tensor build_edge_features(const hg::CompGraph& g,
                                const num::Tensor& base_table,
                                const num::Tensor& attr_proj, int attr_dim,
                                int hidden) {
  std::vector<int> types;
  types.reserve(g.edges.size());
  std::vector<double> attr_data;
  attr_data.reserve(g.edges.size() * static_cast<size_t>(attr_dim));
  for (const auto& e : g.edges) {
    types.push_back(e.type);
    if (static_cast<int>(e.attr.size()) != attr_dim)
      throw DimError("edge attribute dimension mismatch");
    for (double v : e.attr) attr_data.push_back(v);
  }
  num::Tensor base = num::gather_rows(base_table, types);
  num::Tensor attrs = num::Tensor::from_data(
      {static_cast<int>(g.edges.size()), attr_dim}, std::move(attr_data));
  num::Tensor gate = num::add(
      num::Tensor::full({static_cast<int>(g.edges.size()), hidden}, 1.0),
      num::matmul(attrs, attr_proj));
  return num::mul(base, gate);
}

num::Tensor run_stage(const hg::CompGraph& g, const num::Tensor& edge_feats,
                      const std::vector<num::Tensor>& weights,
                      num::Tensor& alpha, int hidden) {
  num::Tensor h = num::Tensor::full({g.num_nodes, hidden}, 1.0);
  for (const auto& w : weights) h = message_pass(g, h, edge_feats, w);
  return pool(h, alpha);
}

}  // namespace

num::Tensor encode(const hg::HierGraph& hgraph, StageParams& params,
                   EncodeStats* stats) {
  const int hidden = params.cfg.hidden_dim;
  if (!params.prim_embed.defined())
    throw MissingParamsError("encoder parameters not initialized");
  if (params.prim_embed.dim(0) < static_cast<int>(hgraph.primitives.size()))
    throw MissingParamsError("primitive table larger than embedding table");

  if (!hgraph.top_refs_motifs) {
    // single-level hierarchy: one message-pass+pool stage over primitives
    num::Tensor feats =
        build_edge_features(hgraph.top, params.prim_embed,
                            params.attr_proj_motif, hg::kLevel1AttrDim, hidden);
    return run_stage(hgraph.top, feats, params.w_motif,
                     params.alpha_for(1, hgraph.top.num_nodes), hidden);
  }

  // stage 1: each distinct motif is embedded exactly once
  std::vector<num::Tensor> motif_embeds;
  for (const auto& mo : hgraph.motifs) {
    num::Tensor feats =
        build_edge_features(mo.graph, params.prim_embed,
                            params.attr_proj_motif, hg::kLevel1AttrDim, hidden);
    motif_embeds.push_back(run_stage(mo.graph, feats, params.w_motif,
                                     params.alpha_for(1, mo.graph.num_nodes),
                                     hidden));
    if (stats) stats->motif_encodings++;
  }

  // stage 2: motif embeddings become the edge features of the top graph
  num::Tensor motif_table = num::vstack(motif_embeds);
  num::Tensor feats =
      build_edge_features(hgraph.top, motif_table, params.attr_proj_top,
                          hg::kLevel2AttrDim, hidden);
  return run_stage(hgraph.top, feats, params.w_top,
                   params.alpha_for(2, hgraph.top.num_nodes), hidden);
}

}  // namespace gprune::mgnn
