#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gprune/ir.hpp"
#include "gprune/mgnn.hpp"
#include "gprune/ops.hpp"
#include "test_util.hpp"

using namespace gprune;
using num::Tensor;

namespace {

using testutil::random_dag;
using testutil::ref_gcn_pass;

hg::HierGraph two_motif_hierarchy() {
  // 2 distinct motifs referenced by 6 top-level edges
  hg::HierGraph h;
  for (int k = 0; k < ir::kNumLayerKinds; ++k)
    h.primitives.push_back(ir::kind_name(static_cast<ir::LayerKind>(k)));
  hg::CompGraph m1;
  m1.num_nodes = 2;
  m1.edges = {{0, 1, 0, {1.0, 1.0}}};
  hg::CompGraph m2;
  m2.num_nodes = 3;
  m2.edges = {{0, 1, 0, {1.0, 1.0}}, {1, 2, 7, {0.0, 0.0}}};
  h.motifs.push_back({m1, hg::canonical_key(m1), "m1"});
  h.motifs.push_back({m2, hg::canonical_key(m2), "m2"});
  h.top.level = 2;
  h.top.num_nodes = 7;
  for (int i = 0; i < 6; ++i)
    h.top.edges.push_back({i, i + 1, i % 2, {0.5, 0.5, 1.0, 0.5, 0.0}});
  return h;
}

}  // namespace

TEST_CASE("all-ones edge features reduce message_pass to the edge-free GCN") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    hg::CompGraph g = random_dag(rng, 12, 3);
    const int d = 4 + static_cast<int>(rng.uniform_int(5));
    Tensor h = testutil::random_tensor({g.num_nodes, d}, rng);
    Tensor w = testutil::random_tensor({d, d}, rng);
    Tensor ones = Tensor::full({static_cast<int>(g.edges.size()), d}, 1.0);
    Tensor got = mgnn::message_pass(g, h, ones, w);
    Tensor want = ref_gcn_pass(g, h, w);
    REQUIRE(got.shape() == want.shape());
    for (size_t i = 0; i < got.data().size(); ++i)
      CHECK(got.data()[i] == want.data()[i]);  // bitwise
  }
}

TEST_CASE("isolated node aggregates to zero") {
  hg::CompGraph g;
  g.num_nodes = 3;
  g.edges = {{0, 1, 0, {}}};  // node 2 isolated, node 0 has no in-edges
  Rng rng(32);
  Tensor h = testutil::random_tensor({3, 4}, rng);
  Tensor feats = Tensor::full({1, 4}, 1.0);
  Tensor w = testutil::random_tensor({4, 4}, rng);
  Tensor out = mgnn::message_pass(g, h, feats, w);
  for (int j = 0; j < 4; ++j) {
    CHECK(out.data()[2 * 4 + j] == 0.0);
    CHECK(out.data()[0 * 4 + j] == 0.0);
  }
}

TEST_CASE("2-node chain matches the hand-computed product") {
  // h_1' = relu( W^T (h_0 o e) ) in row convention: (h_0 o e) @ W
  hg::CompGraph g;
  g.num_nodes = 2;
  g.edges = {{0, 1, 0, {}}};
  Tensor h = Tensor::from_data({2, 2}, {0.5, -1.0, 9.0, 9.0});
  Tensor e = Tensor::from_data({1, 2}, {2.0, 3.0});
  Tensor w = Tensor::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
  // gated = (0.5*2, -1*3) = (1, -3); msg = (1*1 + -3*3, 1*2 + -3*4) = (-8, -10)
  Tensor out = mgnn::message_pass(g, h, e, w);
  CHECK(out.data()[2] == 0.0);  // relu(-8)
  CHECK(out.data()[3] == 0.0);  // relu(-10)
  // flip the weight signs to land positive
  Tensor w2 = Tensor::from_data({2, 2}, {-1.0, -2.0, -3.0, -4.0});
  Tensor out2 = mgnn::message_pass(g, h, e, w2);
  CHECK(out2.data()[2] == doctest::Approx(8.0));
  CHECK(out2.data()[3] == doctest::Approx(10.0));
}

TEST_CASE("pool selectors and sums") {
  Tensor h = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor alpha1 = Tensor::from_data({1, 3}, {1, 0, 0});
  Tensor out1 = mgnn::pool(h, alpha1);
  CHECK(out1.data() == std::vector<double>{1, 2});
  Tensor alpha2 = Tensor::full({1, 3}, 1.0);
  Tensor out2 = mgnn::pool(h, alpha2);
  CHECK(out2.data() == std::vector<double>{9, 12});
}

TEST_CASE("pool gradient w.r.t. alpha matches finite differences") {
  Rng rng(33);
  Tensor h = testutil::random_tensor({4, 3}, rng);
  Tensor alpha = testutil::random_tensor({1, 4}, rng, 0.5, 1.5, true);
  auto forward = [&]() {
    Tensor e = mgnn::pool(h, alpha);
    return num::mean(num::mul(e, e));
  };
  auto res = testutil::check_gradients(forward, {alpha});
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("encode embeds each distinct motif exactly once") {
  hg::HierGraph h = two_motif_hierarchy();
  Rng rng(34);
  mgnn::StageParams params({8, 2}, ir::kNumLayerKinds, rng);
  mgnn::EncodeStats stats;
  Tensor g = mgnn::encode(h, params, &stats);
  CHECK(stats.motif_encodings == 2);  // 6 references, 2 distinct motifs
  CHECK(g.shape() == std::vector<int>{1, 8});
}

TEST_CASE("encode consumes stage-1 embeddings as stage-2 edge features") {
  ir::ModelIR m =
      ir::load_model_file(testutil::models_dir() + "/resnet_toy.json");
  hg::HierGraph h = hg::lower(m);
  Rng rng(35);
  mgnn::StageParams params({8, 2}, ir::kNumLayerKinds, rng);
  mgnn::EncodeStats stats;
  Tensor got = mgnn::encode(h, params, &stats);
  CHECK(stats.motif_encodings == static_cast<int>(h.motifs.size()));

  // replicate the staging manually with the same parameters
  auto features = [&](const hg::CompGraph& g, const Tensor& table,
                      const Tensor& proj, int attr_dim) {
    std::vector<int> types;
    std::vector<double> attrs;
    for (const auto& e : g.edges) {
      types.push_back(e.type);
      for (double v : e.attr) attrs.push_back(v);
    }
    Tensor base = num::gather_rows(table, types);
    Tensor at = Tensor::from_data({static_cast<int>(g.edges.size()), attr_dim},
                                  std::move(attrs));
    Tensor gate = num::add(
        Tensor::full({static_cast<int>(g.edges.size()), params.cfg.hidden_dim}, 1.0),
        num::matmul(at, proj));
    return num::mul(base, gate);
  };
  auto stage = [&](const hg::CompGraph& g, const Tensor& feats,
                   const std::vector<Tensor>& ws, Tensor& alpha) {
    Tensor hh = Tensor::full({g.num_nodes, params.cfg.hidden_dim}, 1.0);
    for (const auto& w : ws) hh = mgnn::message_pass(g, hh, feats, w);
    return mgnn::pool(hh, alpha);
  };
  std::vector<Tensor> embeds;
  for (const auto& mo : h.motifs)
    embeds.push_back(stage(
        mo.graph,
        features(mo.graph, params.prim_embed, params.attr_proj_motif, 2),
        params.w_motif, params.alpha_for(1, mo.graph.num_nodes)));
  Tensor table = num::vstack(embeds);
  Tensor want = stage(
      h.top, features(h.top, table, params.attr_proj_top, 5), params.w_top,
      params.alpha_for(2, h.top.num_nodes));
  REQUIRE(got.shape() == want.shape());
  for (size_t i = 0; i < got.data().size(); ++i)
    CHECK(got.data()[i] == want.data()[i]);
}

TEST_CASE("single-level hierarchy degenerates to one stage") {
  hg::HierGraph h;
  for (int k = 0; k < ir::kNumLayerKinds; ++k)
    h.primitives.push_back(ir::kind_name(static_cast<ir::LayerKind>(k)));
  h.top_refs_motifs = false;
  h.top.level = 1;
  h.top.num_nodes = 4;
  h.top.edges = {{0, 1, 0, {1.0, 0.5}},
                 {1, 2, 7, {0.0, 0.0}},
                 {2, 3, 3, {0.25, 1.0}}};
  Rng rng(36);
  mgnn::StageParams params({6, 3}, ir::kNumLayerKinds, rng);
  Tensor got = mgnn::encode(h, params);

  std::vector<int> types = {0, 7, 3};
  std::vector<double> attrs = {1.0, 0.5, 0.0, 0.0, 0.25, 1.0};
  Tensor base = num::gather_rows(params.prim_embed, types);
  Tensor at = Tensor::from_data({3, 2}, attrs);
  Tensor gate = num::add(Tensor::full({3, 6}, 1.0),
                         num::matmul(at, params.attr_proj_motif));
  Tensor feats = num::mul(base, gate);
  Tensor hh = Tensor::full({4, 6}, 1.0);
  for (const auto& w : params.w_motif)
    hh = mgnn::message_pass(h.top, hh, feats, w);
  Tensor want = mgnn::pool(hh, params.alpha_for(1, 4));
  for (size_t i = 0; i < got.data().size(); ++i)
    CHECK(got.data()[i] == want.data()[i]);
}

TEST_CASE("full differentiability of the encoder") {
  ir::ModelIR m =
      ir::load_model_file(testutil::models_dir() + "/plain_toy.json");
  hg::HierGraph h = hg::lower(m);
  Rng rng(37);
  mgnn::StageParams params({6, 2}, ir::kNumLayerKinds, rng);
  auto forward = [&]() {
    Tensor g = mgnn::encode(h, params);
    return num::mean(num::mul(g, g));
  };
  {  // materialize alphas once so the FD loop sees a stable parameter list
    num::Tape tape;
    forward();
  }
  auto res = testutil::check_gradients(forward, params.parameters(), 1e-5, 10);
  CHECK(res.checked > 40);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("encode determinism: identical inputs, bit-identical embedding") {
  ir::ModelIR m =
      ir::load_model_file(testutil::models_dir() + "/shufflenet_toy.json");
  hg::HierGraph h = hg::lower(m);
  Rng rng(38);
  mgnn::StageParams params({8, 3}, ir::kNumLayerKinds, rng);
  Tensor a = mgnn::encode(h, params);
  Tensor b = mgnn::encode(h, params);
  CHECK(a.data() == b.data());
}
