#pragma once

#include <optional>
#include <span>
#include <vector>

namespace treedsb {

using NodeId = int;

struct WeightedEdge {
  NodeId u = 0;
  NodeId v = 0;
  double weight = 1.0;

  friend bool operator==(const WeightedEdge&, const WeightedEdge&) = default;
};

struct DirectedEdge {
  NodeId from = 0;
  NodeId to = 0;

  DirectedEdge reversed() const {
    return {to, from};
  }
  friend bool operator==(const DirectedEdge&, const DirectedEdge&) = default;
  friend auto operator<=>(const DirectedEdge&, const DirectedEdge&) = default;
};

// Weighted undirected tree on nodes 0..n-1. Immutable once built.
class UndirectedTree {
 public:
  // Empty placeholder; real trees come from build().
  UndirectedTree() = default;

  // Validates connectivity, acyclicity and weights; throws treedsb::Error.
  static UndirectedTree build(int node_count, std::vector<WeightedEdge> edges);

  int node_count() const {
    return node_count_;
  }
  const std::vector<WeightedEdge>& edges() const {
    return edges_;
  }
  // Neighbours sorted by ascending node id.
  std::span<const NodeId> neighbors(NodeId v) const;
  int degree(NodeId v) const;
  bool is_leaf(NodeId v) const;
  // Degree-1 nodes, ascending.
  std::vector<NodeId> leaves() const;
  bool contains(NodeId v) const {
    return v >= 0 && v < node_count_;
  }
  bool has_edge(NodeId u, NodeId v) const;
  // Weight of edge {u, v}; throws UnknownNode if the edge does not exist.
  double weight(NodeId u, NodeId v) const;
  // Index of {u, v} in edges(), or -1.
  int edge_index(NodeId u, NodeId v) const;
  // True when some node is adjacent to every other node.
  std::optional<NodeId> star_center() const;

 private:
  int node_count_ = 0;
  std::vector<WeightedEdge> edges_;
  std::vector<std::vector<NodeId>> adjacency_;
};

// Orientation of an UndirectedTree away from a root. `edges()` is in
// breadth-first order from the root, siblings by ascending id.
class DirectedTree {
 public:
  NodeId root() const {
    return root_;
  }
  int node_count() const {
    return static_cast<int>(parent_.size());
  }
  const std::vector<DirectedEdge>& edges() const {
    return edges_;
  }
  std::optional<NodeId> parent(NodeId v) const;
  std::span<const NodeId> children(NodeId v) const;
  bool contains(const DirectedEdge& e) const;

 private:
  friend DirectedTree root_at(const UndirectedTree& tree, NodeId root);

  NodeId root_ = 0;
  std::vector<NodeId> parent_;  // -1 at the root
  std::vector<std::vector<NodeId>> children_;
  std::vector<DirectedEdge> edges_;
};

// Chain of directed edges; consecutive edges share a node.
using EdgePath = std::vector<DirectedEdge>;

DirectedTree root_at(const UndirectedTree& tree, NodeId root);

// Unique path from a to b, oriented from a towards b.
EdgePath leaf_path(const UndirectedTree& tree, NodeId a, NodeId b);

// Diffusion duration assigned to an edge: epsilon / (2 * weight).
double horizon_time(double epsilon, double weight);

std::vector<DirectedEdge> breadth_first_edges(const DirectedTree& dtree);

}  // namespace treedsb
