#include "gedit/depgraph.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace gedit::depgraph {

RelationVocab RelationVocab::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open relation vocabulary: " + path.string());
  RelationVocab vocab;
  std::string line;
  while (std::getline(is, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    vocab.names.push_back(line);
  }
  if (vocab.names.empty())
    throw ValidationError("relation vocabulary is empty: " + path.string());
  return vocab;
}

RelationVocab RelationVocab::default_inventory() {
  return RelationVocab{{"sbv", "vob", "pob", "adv", "cmp", "att", "f", "coo", "dbl",
                        "dob", "vv", "ic", "mt", "hed"}};
}

void RelationVocab::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write relation vocabulary: " + path.string());
  for (const auto& name : names) os << name << "\n";
}

std::optional<int> RelationVocab::id(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<int>(it - names.begin());
}

int DepGraph::node_of(std::size_t pos) const {
  for (int v = 0; v < node_count; ++v) {
    if (pos >= static_cast<std::size_t>(node_map[v].first) &&
        pos < static_cast<std::size_t>(node_map[v].second))
      return v;
  }
  throw ValidationError("node_of: position " + std::to_string(pos) + " not mapped");
}

std::optional<std::string> validate_graph(const DepGraph& g, std::size_t length) {
  if (g.node_count <= 0) return "graph has no nodes";
  if (static_cast<int>(g.node_map.size()) != g.node_count)
    return "node_map size differs from node count";

  // node_map must tile [0, L) with disjoint contiguous ranges.
  std::vector<std::pair<int, int>> ranges = g.node_map;
  for (const auto& [s, e] : ranges) {
    if (s < 0 || e <= s || static_cast<std::size_t>(e) > length)
      return "node_map range [" + std::to_string(s) + "," + std::to_string(e) +
             ") out of bounds for length " + std::to_string(length);
  }
  std::sort(ranges.begin(), ranges.end());
  int cursor = 0;
  for (const auto& [s, e] : ranges) {
    if (s > cursor)
      return "node_map tiling gap at position " + std::to_string(cursor);
    if (s < cursor)
      return "node_map ranges overlap at position " + std::to_string(s);
    cursor = e;
  }
  if (static_cast<std::size_t>(cursor) != length)
    return "node_map tiling gap at position " + std::to_string(cursor);

  const int r = g.relation_count();
  if (static_cast<int>(g.edges.size()) != g.node_count - 1)
    return "tree must have exactly |V|-1 edges, got " +
           std::to_string(g.edges.size()) + " for " + std::to_string(g.node_count) +
           " nodes (cycle or disconnection)";
  std::vector<std::vector<int>> adj(g.node_count);
  for (const auto& e : g.edges) {
    if (e.head < 0 || e.head >= g.node_count || e.dep < 0 || e.dep >= g.node_count)
      return "edge endpoint out of range";
    if (e.head == e.dep) return "self-loop edge forms a cycle";
    if (e.rel < 0 || e.rel >= r)
      return "relation id " + std::to_string(e.rel) + " outside [0," +
             std::to_string(r) + ")";
    adj[e.head].push_back(e.dep);
    adj[e.dep].push_back(e.head);
  }
  // With |V|-1 edges, connectivity implies acyclicity.
  std::vector<char> seen(g.node_count, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int visited = 1;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (int u : adj[v]) {
      if (!seen[u]) {
        seen[u] = 1;
        ++visited;
        stack.push_back(u);
      }
    }
  }
  if (visited != g.node_count) return "graph is disconnected (cycle elsewhere)";
  return std::nullopt;
}

void ensure_valid(const DepGraph& g, std::size_t length) {
  if (auto msg = validate_graph(g, length)) throw ValidationError(*msg);
}

numcore::Matrix init_node_features(const numcore::Matrix& enc, const DepGraph& g) {
  const std::size_t d = enc.cols();
  numcore::Matrix x(g.node_count, d);
  for (int v = 0; v < g.node_count; ++v) {
    const auto [s, e] = g.node_map[v];
    const double inv = 1.0 / static_cast<double>(e - s);
    for (int i = s; i < e; ++i)
      for (std::size_t c = 0; c < d; ++c) x(v, c) += inv * enc(i, c);
  }
  return x;
}

void init_node_features_backward(const DepGraph& g, const numcore::Matrix& upstream,
                                 numcore::Matrix& denc) {
  const std::size_t d = upstream.cols();
  for (int v = 0; v < g.node_count; ++v) {
    const auto [s, e] = g.node_map[v];
    const double inv = 1.0 / static_cast<double>(e - s);
    for (int i = s; i < e; ++i)
      for (std::size_t c = 0; c < d; ++c) denc(i, c) += inv * upstream(v, c);
  }
}

void add_rgcn_params(numcore::ParamStore& params, int relation_count, int dim) {
  for (const char* layer : {"rgcn.l1", "rgcn.l2"}) {
    params.add(std::string(layer) + ".self", dim, dim);
    for (int k = 0; k < 2 * relation_count; ++k)
      params.add(std::string(layer) + ".rel" + std::to_string(k), dim, dim);
  }
}

namespace {

// Directed neighborhoods: edge (a, b, r) puts b in a's list under 2r and a
// in b's list under 2r+1.
std::vector<std::map<int, std::vector<int>>> directed_neighbors(const DepGraph& g) {
  std::vector<std::map<int, std::vector<int>>> nbrs(g.node_count);
  for (const auto& e : g.edges) {
    nbrs[e.head][2 * e.rel].push_back(e.dep);
    nbrs[e.dep][2 * e.rel + 1].push_back(e.head);
  }
  return nbrs;
}

}  // namespace

numcore::Matrix rgcn_layer(const DepGraph& g, const numcore::Matrix& h,
                           const numcore::ParamStore& params, const std::string& prefix,
                           RgcnLayerCache* cache) {
  const numcore::Matrix& w_self = params.at(prefix + ".self");
  if (h.cols() != w_self.cols())
    throw ValidationError("rgcn_layer: input width mismatch for " + prefix);
  const std::size_t d_in = h.cols();
  const std::size_t d_out = w_self.rows();

  const auto nbrs = directed_neighbors(g);
  numcore::Matrix pre(g.node_count, d_out);
  std::vector<double> mean(d_in);
  for (int i = 0; i < g.node_count; ++i) {
    auto self_part = numcore::matvec(w_self, h.row(i));
    for (std::size_t c = 0; c < d_out; ++c) pre(i, c) = self_part[c];
    for (const auto& [k, js] : nbrs[i]) {
      const double inv = 1.0 / static_cast<double>(js.size());
      std::fill(mean.begin(), mean.end(), 0.0);
      for (int j : js)
        for (std::size_t c = 0; c < d_in; ++c) mean[c] += inv * h(j, c);
      const auto part =
          numcore::matvec(params.at(prefix + ".rel" + std::to_string(k)), mean);
      for (std::size_t c = 0; c < d_out; ++c) pre(i, c) += part[c];
    }
  }
  numcore::Matrix out = pre;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = std::max(0.0, out.data()[i]);
  if (cache) {
    cache->input = h;
    cache->pre = pre;
    cache->out = out;
  }
  return out;
}

numcore::Matrix rgcn_forward(const DepGraph& g, const numcore::Matrix& x,
                             const numcore::ParamStore& params, RgcnCache* cache) {
  RgcnLayerCache c1, c2;
  auto h1 = rgcn_layer(g, x, params, "rgcn.l1", cache ? &c1 : nullptr);
  auto h2 = rgcn_layer(g, h1, params, "rgcn.l2", cache ? &c2 : nullptr);
  if (cache) {
    cache->l1 = std::move(c1);
    cache->l2 = std::move(c2);
  }
  return h2;
}

void rgcn_layer_backward(const DepGraph& g, const RgcnLayerCache& cache,
                         const numcore::ParamStore& params, const std::string& prefix,
                         const numcore::Matrix& upstream, numcore::Matrix& dinput,
                         numcore::GradMap& grads) {
  if (cache.pre.rows() == 0) throw ValidationError("rgcn_layer_backward: missing cache");
  const numcore::Matrix& w_self = params.at(prefix + ".self");
  const std::size_t d_in = cache.input.cols();
  const std::size_t d_out = w_self.rows();
  const auto nbrs = directed_neighbors(g);

  numcore::Matrix dpre = upstream;
  for (std::size_t i = 0; i < dpre.size(); ++i)
    if (cache.pre.data()[i] <= 0.0) dpre.data()[i] = 0.0;

  auto& dw_self = numcore::grad_slot(grads, prefix + ".self", d_out, d_in);
  std::vector<double> mean(d_in);
  for (int i = 0; i < g.node_count; ++i) {
    numcore::add_outer(dw_self, dpre.row(i), cache.input.row(i));
    auto dh_self = numcore::matvec_t(w_self, dpre.row(i));
    for (std::size_t c = 0; c < d_in; ++c) dinput(i, c) += dh_self[c];
    for (const auto& [k, js] : nbrs[i]) {
      const std::string name = prefix + ".rel" + std::to_string(k);
      const numcore::Matrix& w = params.at(name);
      const double inv = 1.0 / static_cast<double>(js.size());
      std::fill(mean.begin(), mean.end(), 0.0);
      for (int j : js)
        for (std::size_t c = 0; c < d_in; ++c) mean[c] += inv * cache.input(j, c);
      auto& dw = numcore::grad_slot(grads, name, d_out, d_in);
      numcore::add_outer(dw, dpre.row(i), mean);
      auto dmean = numcore::matvec_t(w, dpre.row(i));
      for (int j : js)
        for (std::size_t c = 0; c < d_in; ++c) dinput(j, c) += inv * dmean[c];
    }
  }
}

numcore::Matrix rgcn_backward(const DepGraph& g, const RgcnCache& cache,
                              const numcore::ParamStore& params,
                              const numcore::Matrix& upstream, numcore::GradMap& grads) {
  numcore::Matrix dh1(cache.l1.out.rows(), cache.l1.out.cols());
  rgcn_layer_backward(g, cache.l2, params, "rgcn.l2", upstream, dh1, grads);
  numcore::Matrix dx(cache.l1.input.rows(), cache.l1.input.cols());
  rgcn_layer_backward(g, cache.l1, params, "rgcn.l1", dh1, dx, grads);
  return dx;
}

}  // namespace gedit::depgraph
