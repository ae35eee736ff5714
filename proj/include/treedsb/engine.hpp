#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "treedsb/drift_net.hpp"
#include "treedsb/measures.hpp"
#include "treedsb/schedule.hpp"
#include "treedsb/tree.hpp"

namespace treedsb {

struct TrainSettings {
  int steps = 50;
  double gamma0 = 1e-5;
  double lr = 1e-4;
  int batch = 512;
  int iters_per_ipf = 2000;
  Activation activation = Activation::Silu;
  int refresh_every = 500;
  // Trajectories simulated per cache refresh (a random subset of the
  // start dataset when it is larger).
  int cache_size = 2048;
  // Losses averaged to report the final loss of a training run.
  int loss_window = 50;

  friend bool operator==(const TrainSettings&, const TrainSettings&) = default;
};

// Leaf root: `node` is a leaf and mu0 is empty. Internal root: `node` is an
// interior node and mu0 is the reference marginal placed on it.
struct RootSpec {
  NodeId node = 0;
  std::optional<GaussianMeasure> mu0;
};

struct EngineConfig {
  UndirectedTree tree;
  double epsilon = 0.1;
  std::map<NodeId, SampleSet> leaf_data;
  RootSpec root;
  TrainSettings train;
  std::uint64_t seed = 0;
  Eigen::Index root_samples = 10000;  // draws from mu0 in internal-root mode
};

struct EdgeTrainStats {
  DirectedEdge simulated;  // forward edge trajectories were drawn along
  DirectedEdge trained;    // reverse edge whose model was updated
  double first_loss = 0.0;
  double final_loss = 0.0;  // mean over the last loss_window steps
  double min_loss = 0.0;
  int steps = 0;
};

struct IterationMetrics {
  long iteration = 0;  // 0-based global counter
  long cycle = 0;      // 0-based
  NodeId start = 0;
  NodeId target = 0;
  std::vector<EdgeTrainStats> edges;
  std::optional<double> uvp;  // filled by an evaluator when available
};

class TreeDsbEngine {
 public:
  using Net = DriftNet<float>;

  // Validates the configuration (ConfigInvalid) and initializes every
  // directed-edge model to the zero drift.
  explicit TreeDsbEngine(EngineConfig cfg);

  const EngineConfig& config() const {
    return cfg_;
  }
  bool internal_root() const {
    return cfg_.root.mu0.has_value();
  }
  long iteration() const {
    return iteration_;
  }
  long cycle() const {
    return cycle_;
  }
  NodeId current_node() const {
    return current_;
  }
  const std::vector<NodeId>& leaf_order() const {
    return order_;
  }
  // Leaf targeted by the next iteration.
  NodeId next_target() const;
  // Path the next iteration will traverse.
  EdgePath next_path() const;

  const Net& model(DirectedEdge e) const;
  const AdamState<float>& adam(DirectedEdge e) const;
  const std::map<DirectedEdge, Net>& models() const {
    return models_;
  }
  const TimeSchedule& schedule(NodeId u, NodeId v) const;

  // Internal-root first step: path root -> first leaf, simulated from mu0.
  // Throws RootIsLeaf in leaf-root mode and ConfigInvalid if iterations
  // already ran.
  IterationMetrics first_iteration_internal_root();

  // One mIPF iteration along the path from the current node to the next
  // leaf in the cycle order.
  IterationMetrics ipf_iteration();

  using IterationHook = std::function<void(IterationMetrics&)>;
  // Runs K * n_cycles iterations, invoking `hook` after each one.
  std::vector<IterationMetrics> run_cycles(int n_cycles,
                                           const IterationHook& hook = {});

  // Pushes samples along one directed edge with its current model; returns
  // the terminal slice.
  SampleSet push_edge(DirectedEdge e, const SampleSet& init,
                      std::uint64_t seed) const;
  // Pushes samples along consecutive edges.
  SampleSet push_path(const EdgePath& path, const SampleSet& init,
                      std::uint64_t seed) const;

  // Draws `count` points from the start leaf's data and diffuses them along
  // every edge of the tree rooted at that leaf.
  std::map<NodeId, SampleSet> sample_tree(NodeId start_leaf,
                                          Eigen::Index count,
                                          std::uint64_t seed) const;
  // Center slice of sample_tree on a star tree (NotStarTree otherwise).
  SampleSet barycenter_samples(NodeId start_leaf, Eigen::Index count,
                               std::uint64_t seed) const;

  // Random rows of a leaf dataset (with replacement only when count exceeds
  // the dataset size).
  SampleSet draw_leaf(NodeId leaf, Eigen::Index count,
                      std::uint64_t seed) const;

 private:
  struct TrainCache;

  IterationMetrics run_path(NodeId start, NodeId target);
  EdgeTrainStats train_edge(DirectedEdge e, const SampleSet& data,
                            std::uint64_t key);
  void build_cache(DirectedEdge e, const SampleSet& data, std::uint64_t key,
                   int refresh, TrainCache& cache) const;
  BatchDrift drift_of(const Net& net) const;
  void start_cycle();
  SampleSet start_data(NodeId node) const;

  EngineConfig cfg_;
  int dim_ = 0;
  std::vector<NodeId> leaves_;
  std::map<DirectedEdge, Net> models_;
  std::map<DirectedEdge, AdamState<float>> adam_;
  std::map<DirectedEdge, TimeSchedule> schedules_;

  long iteration_ = 0;
  long cycle_ = 0;
  std::size_t pos_ = 0;  // index into order_ of the next target
  std::vector<NodeId> order_;
  NodeId current_ = 0;
};

}  // namespace treedsb
