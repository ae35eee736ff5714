#include "treedsb/tree.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <set>
#include <string>
#include <utility>

#include "treedsb/error.hpp"

namespace treedsb {

namespace {

struct DisjointSets {
  explicit DisjointSets(int n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
  std::vector<int> parent;
};

std::string edge_str(NodeId u, NodeId v) {
  return "{" + std::to_string(u) + "," + std::to_string(v) + "}";
}

}  // namespace

UndirectedTree UndirectedTree::build(int node_count,
                                     std::vector<WeightedEdge> edges) {
  if (node_count < 2) {
    throw Error(ErrorCode::NonPositiveInput,
                "a tree needs at least two nodes, got " +
                    std::to_string(node_count));
  }
  std::set<std::pair<NodeId, NodeId>> seen;
  DisjointSets sets(node_count);
  for (const auto& e : edges) {
    if (e.u < 0 || e.u >= node_count || e.v < 0 || e.v >= node_count) {
      throw Error(ErrorCode::UnknownNode, "edge " + edge_str(e.u, e.v) +
                                              " references a node outside 0.." +
                                              std::to_string(node_count - 1));
    }
    if (!(e.weight > 0.0) || !std::isfinite(e.weight)) {
      throw Error(ErrorCode::NonPositiveWeight,
                  "edge " + edge_str(e.u, e.v) + " has weight " +
                      std::to_string(e.weight));
    }
    if (e.u == e.v) {
      throw Error(ErrorCode::CycleDetected,
                  "self loop at node " + std::to_string(e.u));
    }
    auto key = std::minmax(e.u, e.v);
    if (!seen.insert(key).second) {
      throw Error(ErrorCode::DuplicateEdge,
                  "edge " + edge_str(e.u, e.v) + " listed twice");
    }
    if (!sets.unite(e.u, e.v)) {
      throw Error(ErrorCode::CycleDetected,
                  "edge " + edge_str(e.u, e.v) + " closes a cycle");
    }
  }
  if (static_cast<int>(edges.size()) != node_count - 1) {
    throw Error(ErrorCode::Disconnected,
                std::to_string(edges.size()) + " edges cannot connect " +
                    std::to_string(node_count) + " nodes");
  }

  UndirectedTree tree;
  tree.node_count_ = node_count;
  tree.edges_ = std::move(edges);
  tree.adjacency_.assign(node_count, {});
  for (const auto& e : tree.edges_) {
    tree.adjacency_[e.u].push_back(e.v);
    tree.adjacency_[e.v].push_back(e.u);
  }
  for (auto& adj : tree.adjacency_) std::sort(adj.begin(), adj.end());
  return tree;
}

std::span<const NodeId> UndirectedTree::neighbors(NodeId v) const {
  if (!contains(v)) {
    throw Error(ErrorCode::UnknownNode, "node " + std::to_string(v));
  }
  return adjacency_[v];
}

int UndirectedTree::degree(NodeId v) const {
  return static_cast<int>(neighbors(v).size());
}

bool UndirectedTree::is_leaf(NodeId v) const {
  return degree(v) == 1;
}

std::vector<NodeId> UndirectedTree::leaves() const {
  std::vector<NodeId> out;
  for (NodeId v = 0; v < node_count_; ++v) {
    if (adjacency_[v].size() == 1) out.push_back(v);
  }
  return out;
}

bool UndirectedTree::has_edge(NodeId u, NodeId v) const {
  return edge_index(u, v) >= 0;
}

int UndirectedTree::edge_index(NodeId u, NodeId v) const {
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const auto& e = edges_[i];
    if ((e.u == u && e.v == v) || (e.u == v && e.v == u)) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

double UndirectedTree::weight(NodeId u, NodeId v) const {
  int idx = edge_index(u, v);
  if (idx < 0) {
    throw Error(ErrorCode::UnknownNode, "no edge " + edge_str(u, v));
  }
  return edges_[idx].weight;
}

std::optional<NodeId> UndirectedTree::star_center() const {
  for (NodeId v = 0; v < node_count_; ++v) {
    if (static_cast<int>(adjacency_[v].size()) == node_count_ - 1) {
      // A 2-node tree is a bridge, not a star.
      if (node_count_ > 2) return v;
    }
  }
  return std::nullopt;
}

std::optional<NodeId> DirectedTree::parent(NodeId v) const {
  if (v < 0 || v >= node_count()) {
    throw Error(ErrorCode::UnknownNode, "node " + std::to_string(v));
  }
  if (parent_[v] < 0) return std::nullopt;
  return parent_[v];
}

std::span<const NodeId> DirectedTree::children(NodeId v) const {
  if (v < 0 || v >= node_count()) {
    throw Error(ErrorCode::UnknownNode, "node " + std::to_string(v));
  }
  return children_[v];
}

bool DirectedTree::contains(const DirectedEdge& e) const {
  return e.to >= 0 && e.to < node_count() && parent_[e.to] == e.from;
}

DirectedTree root_at(const UndirectedTree& tree, NodeId root) {
  if (!tree.contains(root)) {
    throw Error(ErrorCode::UnknownNode, "root " + std::to_string(root));
  }
  const int n = tree.node_count();
  DirectedTree out;
  out.root_ = root;
  out.parent_.assign(n, -1);
  out.children_.assign(n, {});
  out.edges_.reserve(n - 1);

  std::vector<bool> visited(n, false);
  std::deque<NodeId> queue{root};
  visited[root] = true;
  while (!queue.empty()) {
    NodeId v = queue.front();
    queue.pop_front();
    for (NodeId w : tree.neighbors(v)) {
      if (visited[w]) continue;
      visited[w] = true;
      out.parent_[w] = v;
      out.children_[v].push_back(w);
      out.edges_.push_back({v, w});
      queue.push_back(w);
    }
  }
  return out;
}

EdgePath leaf_path(const UndirectedTree& tree, NodeId a, NodeId b) {
  if (!tree.contains(a)) {
    throw Error(ErrorCode::UnknownNode, "node " + std::to_string(a));
  }
  if (!tree.contains(b)) {
    throw Error(ErrorCode::UnknownNode, "node " + std::to_string(b));
  }
  if (a == b) {
    throw Error(ErrorCode::SameNode,
                "path endpoints coincide at node " + std::to_string(a));
  }
  // Rooting at b makes the parent chain of a walk straight to b.
  DirectedTree towards_b = root_at(tree, b);
  EdgePath path;
  NodeId v = a;
  while (v != b) {
    NodeId p = *towards_b.parent(v);
    path.push_back({v, p});
    v = p;
  }
  return path;
}

double horizon_time(double epsilon, double weight) {
  if (!(epsilon > 0.0) || !(weight > 0.0)) {
    throw Error(ErrorCode::NonPositiveInput,
                "horizon needs epsilon > 0 and weight > 0");
  }
  return epsilon / (2.0 * weight);
}

std::vector<DirectedEdge> breadth_first_edges(const DirectedTree& dtree) {
  return dtree.edges();
}

}  // namespace treedsb
