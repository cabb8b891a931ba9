#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gprune/hgraph.hpp"
#include "gprune/rng.hpp"
#include "gprune/tensor.hpp"

namespace gprune::mgnn {

struct MgnnConfig {
  int hidden_dim = 32;
  int num_message_rounds = 3;
};

/// Parameters of the multi-stage encoder. Message-passing weights are
/// shared by all graphs at one hierarchy level (one matrix per round);
/// pooling coefficients are per-graph, registered lazily by
/// (level, node count) and initialized to all-ones.
class StageParams {
 public:
  StageParams() = default;
  StageParams(MgnnConfig cfg, int num_primitives, Rng& rng);

  MgnnConfig cfg;
  num::Tensor prim_embed;            // (num_primitives, hidden)
  std::vector<num::Tensor> w_motif;  // rounds x (hidden, hidden)
  std::vector<num::Tensor> w_top;    // rounds x (hidden, hidden)
  num::Tensor attr_proj_motif;       // (level-1 attr dim, hidden)
  num::Tensor attr_proj_top;         // (level-2 attr dim, hidden)

  num::Tensor& alpha_for(int level, int node_count);

  std::vector<num::Tensor> parameters() const;
  std::vector<std::pair<std::string, num::Tensor>> named_parameters() const;
  StageParams clone() const;

 private:
  std::map<std::pair<int, int>, num::Tensor> alpha_;
};

/// One aggregation round: h_i' = relu( (1/c_i) * sum_{j in N_i} W (h_j o e_k) )
/// with c_i = max(1, in-degree). Edge features must be hidden_dim wide.
num::Tensor message_pass(const hg::CompGraph& g, const num::Tensor& h,
                         const num::Tensor& edge_feats, const num::Tensor& w);

/// e = alpha h  (alpha is a (1, n) row of per-node coefficients)
num::Tensor pool(const num::Tensor& h, const num::Tensor& alpha);

struct EncodeStats {
  int motif_encodings = 0;
};

/// Stage 1 embeds each distinct motif once; stage 2 consumes the motif
/// embeddings, gated by the projected edge attributes, as edge features of
/// the top graph. Returns the top-level graph embedding (1, hidden).
num::Tensor encode(const hg::HierGraph& hgraph, StageParams& params,
                   EncodeStats* stats = nullptr);

}  // namespace gprune::mgnn
