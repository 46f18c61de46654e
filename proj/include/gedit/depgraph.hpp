#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gedit/numcore.hpp"

namespace gedit::depgraph {

// Relation inventory. Index in `names` is the relation id used on edges.
struct RelationVocab {
  std::vector<std::string> names;

  static RelationVocab load(const std::filesystem::path& path);
  // 14 relations, after the DDParser label set.
  static RelationVocab default_inventory();
  void save(const std::filesystem::path& path) const;

  std::optional<int> id(const std::string& name) const;
  int size() const { return static_cast<int>(names.size()); }
  bool operator==(const RelationVocab&) const = default;
};

struct Edge {
  int head = 0;
  int dep = 0;
  int rel = 0;
  bool operator==(const Edge&) const = default;
};

// Typed, directed dependency tree over nodes that partition the sub-word
// sequence. node_map[v] is the contiguous [start, end) sub-word range of v.
struct DepGraph {
  int node_count = 0;
  std::vector<Edge> edges;
  std::vector<std::pair<int, int>> node_map;
  std::vector<std::string> relation_names;

  int relation_count() const { return static_cast<int>(relation_names.size()); }
  // Node owning sub-word position i. Graph must be valid.
  int node_of(std::size_t pos) const;
  bool operator==(const DepGraph&) const = default;
};

// Checks the tree property (connected, |V|-1 edges, acyclic) and that
// node_map tiles [0, L) with disjoint contiguous ranges. Returns nullopt
// when the graph is valid, otherwise a diagnostic message.
std::optional<std::string> validate_graph(const DepGraph& g, std::size_t length);
void ensure_valid(const DepGraph& g, std::size_t length);

// Node features: row v = mean of encoder rows in node v's sub-word range.
numcore::Matrix init_node_features(const numcore::Matrix& enc, const DepGraph& g);
void init_node_features_backward(const DepGraph& g, const numcore::Matrix& upstream,
                                 numcore::Matrix& denc);

// Per-layer parameters live in a ParamStore under `prefix`:
//   <prefix>.self          self-loop matrix W_0
//   <prefix>.rel<k>        k in [0, 2R): 2r = relation r head->dependent,
//                          2r+1 = the inverse direction
// Both layers are dim x dim so the output width matches the encoder.
void add_rgcn_params(numcore::ParamStore& params, int relation_count, int dim);

struct RgcnLayerCache {
  numcore::Matrix input;
  numcore::Matrix pre;  // pre-activation
  numcore::Matrix out;
};

// h_i' = ReLU( sum_r sum_{j in N_i^r} (1/c_{i,r}) W_r h_j + W_0 h_i ) with
// c_{i,r} = |N_i^r|; empty neighborhoods contribute nothing.
numcore::Matrix rgcn_layer(const DepGraph& g, const numcore::Matrix& h,
                           const numcore::ParamStore& params, const std::string& prefix,
                           RgcnLayerCache* cache = nullptr);

struct RgcnCache {
  RgcnLayerCache l1, l2;
};

// Two stacked layers; prefixes "rgcn.l1" and "rgcn.l2".
numcore::Matrix rgcn_forward(const DepGraph& g, const numcore::Matrix& x,
                             const numcore::ParamStore& params,
                             RgcnCache* cache = nullptr);

void rgcn_layer_backward(const DepGraph& g, const RgcnLayerCache& cache,
                         const numcore::ParamStore& params, const std::string& prefix,
                         const numcore::Matrix& upstream, numcore::Matrix& dinput,
                         numcore::GradMap& grads);

// Returns the gradient w.r.t. the layer-1 input features.
numcore::Matrix rgcn_backward(const DepGraph& g, const RgcnCache& cache,
                              const numcore::ParamStore& params,
                              const numcore::Matrix& upstream, numcore::GradMap& grads);

}  // namespace gedit::depgraph
