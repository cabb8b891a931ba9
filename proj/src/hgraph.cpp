#include "gprune/hgraph.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gprune/errors.hpp"

namespace gprune::hg {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::vector<int> CompGraph::in_degrees() const {
  std::vector<int> deg(static_cast<size_t>(num_nodes), 0);
  for (const auto& e : edges) deg[static_cast<size_t>(e.dst)]++;
  return deg;
}

bool HierGraph::operator==(const HierGraph& o) const {
  if (primitives != o.primitives || top_refs_motifs != o.top_refs_motifs ||
      !(top == o.top) || motifs.size() != o.motifs.size())
    return false;
  for (size_t i = 0; i < motifs.size(); ++i)
    if (motifs[i].key != o.motifs[i].key || !(motifs[i].graph == o.motifs[i].graph))
      return false;
  return true;
}

// ---------------------------------------------------------------------------
// canonical labeling
// ---------------------------------------------------------------------------

namespace {

std::string double_digest(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);  // exact hex float
  return buf;
}

std::string edge_key(const Edge& e) {
  std::string s = "t" + std::to_string(e.type);
  for (double v : e.attr) s += "," + double_digest(v);
  return s;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct Canonicalizer {
  const CompGraph& g;
  int n;
  std::vector<std::string> ekeys;  // per edge

  explicit Canonicalizer(const CompGraph& graph)
      : g(graph), n(graph.num_nodes) {
    ekeys.reserve(g.edges.size());
    for (const auto& e : g.edges) ekeys.push_back(edge_key(e));
  }

  // Weisfeiler-Lehman style refinement: a node's new color combines its old
  // color with the multisets of (edge key, neighbor color) on each side.
  std::vector<int> refine(std::vector<int> colors) const {
    for (;;) {
      std::vector<std::string> sig(static_cast<size_t>(n));
      for (int v = 0; v < n; ++v)
        sig[static_cast<size_t>(v)] = "c" + std::to_string(colors[static_cast<size_t>(v)]);
      std::vector<std::vector<std::string>> items_in(static_cast<size_t>(n));
      std::vector<std::vector<std::string>> items_out(static_cast<size_t>(n));
      for (size_t ei = 0; ei < g.edges.size(); ++ei) {
        const Edge& e = g.edges[ei];
        items_in[static_cast<size_t>(e.dst)].push_back(
            ekeys[ei] + ":" + std::to_string(colors[static_cast<size_t>(e.src)]));
        items_out[static_cast<size_t>(e.src)].push_back(
            ekeys[ei] + ":" + std::to_string(colors[static_cast<size_t>(e.dst)]));
      }
      for (int v = 0; v < n; ++v) {
        auto& iv = items_in[static_cast<size_t>(v)];
        auto& ov = items_out[static_cast<size_t>(v)];
        std::sort(iv.begin(), iv.end());
        std::sort(ov.begin(), ov.end());
        std::string& s = sig[static_cast<size_t>(v)];
        s += "|I";
        for (const auto& x : iv) s += ";" + x;
        s += "|O";
        for (const auto& x : ov) s += ";" + x;
      }
      // relabel by sorted signature rank
      std::vector<std::string> uniq = sig;
      std::sort(uniq.begin(), uniq.end());
      uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
      std::vector<int> next(static_cast<size_t>(n));
      for (int v = 0; v < n; ++v)
        next[static_cast<size_t>(v)] = static_cast<int>(
            std::lower_bound(uniq.begin(), uniq.end(), sig[static_cast<size_t>(v)]) -
            uniq.begin());
      if (next == colors) return colors;
      colors = std::move(next);
    }
  }

  std::string encode(const std::vector<int>& pos) const {
    std::vector<std::string> lines;
    lines.reserve(g.edges.size());
    for (size_t ei = 0; ei < g.edges.size(); ++ei) {
      const Edge& e = g.edges[ei];
      char buf[32];
      std::snprintf(buf, sizeof buf, "%d>%d:",
                    pos[static_cast<size_t>(e.src)], pos[static_cast<size_t>(e.dst)]);
      lines.push_back(buf + ekeys[ei]);
    }
    std::sort(lines.begin(), lines.end());
    std::string out = "n" + std::to_string(n);
    for (const auto& l : lines) out += "\n" + l;
    return out;
  }

  // Individualization-refinement search for the lexicographically smallest
  // encoding; exact on the small motif graphs this project builds.
  void search(std::vector<int> colors, std::string& best) const {
    colors = refine(colors);
    // smallest color class with more than one node
    std::map<int, std::vector<int>> classes;
    for (int v = 0; v < n; ++v) classes[colors[static_cast<size_t>(v)]].push_back(v);
    int split_color = -1;
    for (const auto& [c, vs] : classes)
      if (vs.size() > 1) {
        split_color = c;
        break;
      }
    if (split_color < 0) {
      // discrete: colors form a permutation
      std::string enc = encode(colors);
      if (best.empty() || enc < best) best = std::move(enc);
      return;
    }
    for (int v : classes[split_color]) {
      std::vector<int> child = colors;
      child[static_cast<size_t>(v)] = n;  // unique color outside 0..n-1
      search(std::move(child), best);
    }
  }
};

}  // namespace

MotifKey canonical_key(const CompGraph& g) {
  Canonicalizer c(g);
  std::string best;
  c.search(std::vector<int>(static_cast<size_t>(g.num_nodes), 0), best);
  MotifKey key;
  key.canon = std::move(best);
  key.hash = fnv1a(key.canon);
  return key;
}

// ---------------------------------------------------------------------------
// lowering
// ---------------------------------------------------------------------------

namespace {

// One lowering unit: a declared block or a synthesized singleton wrapping a
// loose layer.
struct Unit {
  std::string label;
  std::vector<int> members;  // layer indices, topo order
  int exit = -1;             // member producing the boundary tensor
  std::vector<int> sources;  // external producer layer indices (or kInputSource)
  bool singleton = false;
};

double stride_of(const ir::LayerSpec& l) {
  return static_cast<double>(std::max(l.stride.first, l.stride.second));
}

bool has_kernel(ir::LayerKind k) {
  return ir::is_conv_family(k) || k == ir::LayerKind::maxpool ||
         k == ir::LayerKind::avgpool;
}

}  // namespace

HierGraph lower(const ir::ModelIR& m) {
  const size_t n = m.layers.size();
  HierGraph hg;
  for (int k = 0; k < ir::kNumLayerKinds; ++k)
    hg.primitives.push_back(ir::kind_name(static_cast<ir::LayerKind>(k)));

  // model-wide normalizers; stable under pruning by construction
  double max_base_ch = static_cast<double>(m.input_shape.c);
  double max_kernel_area = 1.0;
  double max_stride = 1.0;
  for (const auto& l : m.layers) {
    max_base_ch = std::max(max_base_ch, static_cast<double>(l.base_out_channels));
    if (has_kernel(l.kind)) {
      max_kernel_area = std::max(
          max_kernel_area, static_cast<double>(l.kernel.first * l.kernel.second));
      max_stride = std::max(max_stride, stride_of(l));
    }
  }

  auto level1_attr = [&](const ir::LayerSpec& l) {
    std::vector<double> a(kLevel1AttrDim, 0.0);
    if (has_kernel(l.kind)) {
      a[0] = static_cast<double>(l.kernel.first * l.kernel.second) / max_kernel_area;
      a[1] = stride_of(l) / max_stride;
    }
    return a;
  };

  // ---- lowering units --------------------------------------------------
  std::vector<int> unit_of(n, -1);
  std::vector<Unit> units;
  for (const auto& b : m.blocks) {
    Unit u;
    u.label = block_kind_name(b.kind);
    for (const auto& id : b.layers) u.members.push_back(m.index_of(id));
    std::sort(u.members.begin(), u.members.end());
    for (int li : u.members) unit_of[static_cast<size_t>(li)] = static_cast<int>(units.size());
    units.push_back(std::move(u));
  }
  for (size_t i = 0; i < n; ++i) {
    if (unit_of[i] >= 0) continue;
    Unit u;
    u.label = ir::kind_name(m.layers[i].kind);
    u.members = {static_cast<int>(i)};
    u.singleton = true;
    unit_of[i] = static_cast<int>(units.size());
    units.push_back(std::move(u));
  }

  // exits and external sources
  for (auto& u : units) {
    std::set<int> member_set(u.members.begin(), u.members.end());
    for (int li : u.members) {
      bool outside = m.consumers[static_cast<size_t>(li)].empty();
      for (int c : m.consumers[static_cast<size_t>(li)])
        if (!member_set.count(c)) outside = true;
      if (outside) {
        if (u.exit >= 0)
          throw LowerError("block with label '" + u.label +
                           "' has more than one output tensor");
        u.exit = li;
      }
      for (int p : m.producers[static_cast<size_t>(li)])
        if (p == ir::ModelIR::kInputSource || !member_set.count(p))
          u.sources.push_back(p);
    }
    if (u.exit < 0)
      throw LowerError("block with label '" + u.label + "' has no output tensor");
    std::sort(u.sources.begin(), u.sources.end());
    u.sources.erase(std::unique(u.sources.begin(), u.sources.end()),
                    u.sources.end());
    if (!u.singleton && u.sources.size() != 1)
      throw LowerError("block with label '" + u.label +
                       "' must have exactly one external input tensor");
  }

  // ---- build motif graph per unit and deduplicate -----------------------
  auto build_motif = [&](const Unit& u) {
    CompGraph g;
    g.level = 1;
    if (u.singleton) {
      // a loose layer is the one-edge motif of its own kind; fan-in shows up
      // as parallel edges in the top-level graph instead
      const ir::LayerSpec& l = m.layers[static_cast<size_t>(u.members[0])];
      g.num_nodes = 2;
      g.edges.push_back({0, 1, static_cast<int>(l.kind), level1_attr(l)});
      return g;
    }
    // node 0 = external input tensor; one node per member output
    std::map<int, int> node_of;  // layer index -> node id
    g.num_nodes = 1;
    for (int li : u.members) node_of[li] = g.num_nodes++;
    for (int li : u.members) {
      const ir::LayerSpec& l = m.layers[static_cast<size_t>(li)];
      const int kind_idx = static_cast<int>(l.kind);
      for (int p : m.producers[static_cast<size_t>(li)]) {
        const int src = node_of.count(p) ? node_of[p] : 0;
        g.edges.push_back({src, node_of[li], kind_idx, level1_attr(l)});
      }
    }
    return g;
  };

  std::vector<int> motif_of_unit(units.size(), -1);
  for (size_t ui = 0; ui < units.size(); ++ui) {
    CompGraph g = build_motif(units[ui]);
    MotifKey key = canonical_key(g);
    int found = -1;
    for (size_t mi = 0; mi < hg.motifs.size(); ++mi)
      if (hg.motifs[mi].key == key) {
        found = static_cast<int>(mi);
        break;
      }
    if (found < 0) {
      found = static_cast<int>(hg.motifs.size());
      hg.motifs.push_back({std::move(g), std::move(key), units[ui].label});
    }
    motif_of_unit[ui] = found;
  }

  // ---- top-level graph ---------------------------------------------------
  // boundary tensors: the model input plus every unit exit
  std::map<int, int> node_of_tensor;  // producer layer index (or -1) -> node
  node_of_tensor[ir::ModelIR::kInputSource] = 0;
  hg.top.level = 2;
  hg.top.num_nodes = 1;
  for (size_t i = 0; i < n; ++i) {  // topo order

    for (const auto& u : units)
      if (u.exit == static_cast<int>(i))
        node_of_tensor[static_cast<int>(i)] = hg.top.num_nodes++;
  }

  for (size_t ui = 0; ui < units.size(); ++ui) {
    const Unit& u = units[ui];

    // level-2 attributes of this block instance
    double in_ch = 0.0;
    if (u.singleton) {
      in_ch = static_cast<double>(m.layers[static_cast<size_t>(u.members[0])].in_channels);
    } else {
      const int p = u.sources[0];
      in_ch = p == ir::ModelIR::kInputSource
                  ? static_cast<double>(m.input_shape.c)
                  : static_cast<double>(m.layers[static_cast<size_t>(p)].out_shape.c);
    }
    const double out_ch =
        static_cast<double>(m.layers[static_cast<size_t>(u.exit)].out_shape.c);
    double karea = 1.0, stride_prod = 1.0;
    double kept_sum = 0.0, base_sum = 0.0;
    for (int li : u.members) {
      const ir::LayerSpec& l = m.layers[static_cast<size_t>(li)];
      if (has_kernel(l.kind)) {
        karea = std::max(karea, static_cast<double>(l.kernel.first * l.kernel.second));
        stride_prod *= stride_of(l);
      }
      if (l.prunable) {
        kept_sum += static_cast<double>(l.out_channels);
        base_sum += static_cast<double>(l.base_out_channels);
      }
    }
    std::vector<double> attr(kLevel2AttrDim);
    attr[0] = in_ch / max_base_ch;
    attr[1] = out_ch / max_base_ch;
    attr[2] = karea / max_kernel_area;
    attr[3] = stride_prod / max_stride;
    attr[4] = base_sum > 0.0 ? 1.0 - kept_sum / base_sum : 0.0;

    const int dst = node_of_tensor.at(u.exit);
    for (int p : u.sources)
      hg.top.edges.push_back(
          {node_of_tensor.at(p), dst, motif_of_unit[ui], attr});
  }

  // every edge type must resolve into the motif table
  for (const auto& e : hg.top.edges)
    if (e.type < 0 || e.type >= static_cast<int>(hg.motifs.size()))
      throw LowerError("dangling motif reference in top-level graph");
  return hg;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

namespace {

ojson graph_to_json(const CompGraph& g) {
  ojson jg;
  jg["level"] = g.level;
  jg["num_nodes"] = g.num_nodes;
  jg["edges"] = ojson::array();
  for (const auto& e : g.edges) {
    ojson je;
    je["src"] = e.src;
    je["dst"] = e.dst;
    je["type"] = e.type;
    je["attr"] = e.attr;
    jg["edges"].push_back(std::move(je));
  }
  return jg;
}

CompGraph graph_from_json(const json& jg) {
  CompGraph g;
  g.level = jg["level"].get<int>();
  g.num_nodes = jg["num_nodes"].get<int>();
  for (const auto& je : jg["edges"]) {
    Edge e;
    e.src = je["src"].get<int>();
    e.dst = je["dst"].get<int>();
    e.type = je["type"].get<int>();
    e.attr = je["attr"].get<std::vector<double>>();
    g.edges.push_back(std::move(e));
  }
  return g;
}

}  // namespace

std::string to_json(const HierGraph& hg) {
  ojson doc;
  doc["primitives"] = hg.primitives;
  doc["motifs"] = ojson::array();
  for (const auto& mo : hg.motifs) {
    ojson jm;
    jm["label"] = mo.label;
    jm["key"] = mo.key.hash;
    jm["graph"] = graph_to_json(mo.graph);
    doc["motifs"].push_back(std::move(jm));
  }
  doc["top"] = graph_to_json(hg.top);
  doc["top_refs_motifs"] = hg.top_refs_motifs;
  return doc.dump(2) + "\n";
}

HierGraph from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad hierarchical graph document: ") + e.what());
  }
  HierGraph hg;
  hg.primitives = doc["primitives"].get<std::vector<std::string>>();
  for (const auto& jm : doc["motifs"]) {
    Motif mo;
    mo.label = jm["label"].get<std::string>();
    mo.graph = graph_from_json(jm["graph"]);
    mo.key = canonical_key(mo.graph);
    hg.motifs.push_back(std::move(mo));
  }
  hg.top = graph_from_json(doc["top"]);
  hg.top_refs_motifs = doc["top_refs_motifs"].get<bool>();
  return hg;
}

std::string to_dot(const HierGraph& hg, int level) {
  std::ostringstream os;
  os << "digraph G {\n  rankdir=LR;\n";
  auto emit = [&](const CompGraph& g, const std::string& prefix,
                  auto name_of_type) {
    for (int v = 0; v < g.num_nodes; ++v)
      os << "  " << prefix << v << " [label=\"" << prefix << v << "\"];\n";
    for (const auto& e : g.edges)
      os << "  " << prefix << e.src << " -> " << prefix << e.dst
         << " [label=\"" << name_of_type(e.type) << "\"];\n";
  };
  if (level >= 2 || hg.motifs.empty()) {
    emit(hg.top, "t", [&](int t) {
      if (!hg.top_refs_motifs) return hg.primitives[static_cast<size_t>(t)];
      return hg.motifs[static_cast<size_t>(t)].label + "#" + std::to_string(t);
    });
  } else {
    for (size_t mi = 0; mi < hg.motifs.size(); ++mi)
      emit(hg.motifs[mi].graph, "m" + std::to_string(mi) + "_",
           [&](int t) { return hg.primitives[static_cast<size_t>(t)]; });
  }
  os << "}\n";
  return os.str();
}

}  // namespace gprune::hg
