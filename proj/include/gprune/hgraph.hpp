#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gprune/ir.hpp"

namespace gprune::hg {

/// Typed, attributed multigraph. Edge types index into the table one level
/// below (motifs for the top graph, primitive ops for motifs).
struct Edge {
  int src = 0;
  int dst = 0;
  int type = 0;
  std::vector<double> attr;
  bool operator==(const Edge&) const = default;
};

struct CompGraph {
  int level = 1;
  int num_nodes = 0;
  std::vector<Edge> edges;
  bool operator==(const CompGraph&) const = default;

  std::vector<int> in_degrees() const;
};

/// Canonical form of a typed attributed DAG. Two graphs compare equal
/// exactly when they are isomorphic with matching edge types and attribute
/// vectors; `canon` is the full canonical encoding, `hash` a digest of it.
struct MotifKey {
  uint64_t hash = 0;
  std::string canon;
  bool operator==(const MotifKey& o) const { return canon == o.canon; }
  bool operator!=(const MotifKey& o) const { return !(*this == o); }
  bool operator<(const MotifKey& o) const { return canon < o.canon; }
};

struct Motif {
  CompGraph graph;
  MotifKey key;
  std::string label;
};

struct HierGraph {
  std::vector<std::string> primitives;  // level-0 op table
  std::vector<Motif> motifs;            // level-1 table; empty = single level
  CompGraph top;
  bool top_refs_motifs = true;

  bool operator==(const HierGraph& o) const;
};

constexpr int kLevel1AttrDim = 2;  // kernel area, stride
constexpr int kLevel2AttrDim = 5;  // in_ch, out_ch, kernel area, stride, ratio

MotifKey canonical_key(const CompGraph& g);

/// Lowers a validated model into a 2-level hierarchy: level-1 motifs are
/// the deduplicated blocks (declared blocks plus one singleton block per
/// loose layer); the top graph has one node per block-boundary tensor and
/// one typed edge per block instance.
HierGraph lower(const ir::ModelIR& m);

std::string to_json(const HierGraph& hg);
HierGraph from_json(const std::string& text);
std::string to_dot(const HierGraph& hg, int level);

}  // namespace gprune::hg
