#include "treedsb/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "treedsb/error.hpp"
#include "treedsb/rng.hpp"

namespace treedsb {

namespace {

// Substream tags keep the random streams of different consumers apart.
enum StreamTag : std::uint64_t {
  kTagInit = 1,
  kTagOrder = 2,
  kTagRootSamples = 3,
  kTagIteration = 4,
  kTagSubset = 5,
  kTagSimulate = 6,
  kTagBatch = 7,
  kTagPropagate = 8,
};

std::vector<Eigen::Index> choose_rows(Eigen::Index n, Eigen::Index k,
                                      std::uint64_t key) {
  std::mt19937_64 rng(key);
  std::vector<Eigen::Index> rows;
  if (k <= n) {
    std::vector<Eigen::Index> idx(n);
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    for (Eigen::Index i = 0; i < k; ++i) {
      std::uniform_int_distribution<Eigen::Index> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    rows.assign(idx.begin(), idx.begin() + k);
  } else {
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    rows.resize(k);
    for (auto& r : rows) r = pick(rng);
  }
  return rows;
}

SampleSet gather(const SampleSet& s, const std::vector<Eigen::Index>& rows) {
  SampleMatrix out(static_cast<Eigen::Index>(rows.size()), s.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = s.row(rows[i]);
  }
  return SampleSet(std::move(out));
}

void invalid(const std::string& msg) {
  throw Error(ErrorCode::ConfigInvalid, msg);
}

}  // namespace

struct TreeDsbEngine::TrainCache {
  // Per step m = 0..N-1: X_{m+1} and F_m(X_m) - F_m(X_{m+1}) for each row.
  std::vector<SampleMatrix> x_next;
  std::vector<SampleMatrix> delta;
  Eigen::Index rows = 0;
};

TreeDsbEngine::TreeDsbEngine(EngineConfig cfg) : cfg_(std::move(cfg)) {
  const auto& tree = cfg_.tree;
  if (tree.node_count() < 2) invalid("tree is empty");
  if (!(cfg_.epsilon > 0.0)) invalid("epsilon must be positive");
  leaves_ = tree.leaves();
  for (NodeId leaf : leaves_) {
    auto it = cfg_.leaf_data.find(leaf);
    if (it == cfg_.leaf_data.end()) {
      invalid("no dataset for leaf " + std::to_string(leaf));
    }
    if (it->second.count() == 0) {
      throw Error(ErrorCode::EmptyDataset,
                  "dataset of leaf " + std::to_string(leaf) + " is empty");
    }
    if (dim_ == 0) dim_ = static_cast<int>(it->second.dim());
    if (it->second.dim() != dim_ || dim_ < 1) {
      invalid("leaf datasets have different dimensions");
    }
  }
  for (const auto& [node, data] : cfg_.leaf_data) {
    if (!tree.contains(node) || !tree.is_leaf(node)) {
      invalid("dataset given for non-leaf node " + std::to_string(node));
    }
  }
  const NodeId r = cfg_.root.node;
  if (!tree.contains(r)) invalid("root " + std::to_string(r) + " not in tree");
  if (internal_root()) {
    if (tree.is_leaf(r)) {
      invalid("a reference marginal is only used for an interior root");
    }
    if (cfg_.root.mu0->dim() != dim_) invalid("mu0 has the wrong dimension");
    if (cfg_.root_samples < 1) invalid("root_samples must be >= 1");
  } else if (!tree.is_leaf(r)) {
    invalid("interior root " + std::to_string(r) + " needs a reference mu0");
  }
  const auto& t = cfg_.train;
  if (t.batch < 1 || t.iters_per_ipf < 0 || t.refresh_every < 1 ||
      t.cache_size < 1 || t.loss_window < 1 || !(t.lr >= 0.0)) {
    invalid("training settings out of range");
  }

  for (const auto& e : tree.edges()) {
    const auto sched =
        make_schedule(t.steps, t.gamma0, horizon_time(cfg_.epsilon, e.weight));
    for (DirectedEdge d : {DirectedEdge{e.u, e.v}, DirectedEdge{e.v, e.u}}) {
      const auto code = static_cast<std::uint64_t>(d.from) *
                            static_cast<std::uint64_t>(tree.node_count()) +
                        static_cast<std::uint64_t>(d.to);
      Net net(dim_, t.activation, substream_key(cfg_.seed, kTagInit, code));
      adam_.emplace(d, AdamState<float>::zeros(net.param_count(), t.lr));
      models_.emplace(d, std::move(net));
      schedules_.emplace(d, sched);
    }
  }
  current_ = r;
  start_cycle();
}

void TreeDsbEngine::start_cycle() {
  std::mt19937_64 rng(
      substream_key(cfg_.seed, kTagOrder, static_cast<std::uint64_t>(cycle_)));
  order_ = leaves_;
  if (cycle_ == 0 && !internal_root()) {
    // The root leaf closes the first cycle so the first path starts there.
    order_.erase(std::find(order_.begin(), order_.end(), cfg_.root.node));
    std::shuffle(order_.begin(), order_.end(), rng);
    order_.push_back(cfg_.root.node);
    return;
  }
  std::shuffle(order_.begin(), order_.end(), rng);
  // Never target the leaf we are standing on.
  while (order_.front() == current_) {
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

NodeId TreeDsbEngine::next_target() const {
  return order_[pos_];
}

EdgePath TreeDsbEngine::next_path() const {
  return leaf_path(cfg_.tree, current_, next_target());
}

const TreeDsbEngine::Net& TreeDsbEngine::model(DirectedEdge e) const {
  auto it = models_.find(e);
  if (it == models_.end()) {
    throw Error(ErrorCode::UnknownNode,
                "no edge (" + std::to_string(e.from) + "," +
                    std::to_string(e.to) + ")");
  }
  return it->second;
}

const AdamState<float>& TreeDsbEngine::adam(DirectedEdge e) const {
  model(e);
  return adam_.at(e);
}

const TimeSchedule& TreeDsbEngine::schedule(NodeId u, NodeId v) const {
  auto it = schedules_.find({u, v});
  if (it == schedules_.end()) {
    throw Error(ErrorCode::UnknownNode, "no edge (" + std::to_string(u) + "," +
                                            std::to_string(v) + ")");
  }
  return it->second;
}

BatchDrift TreeDsbEngine::drift_of(const Net& net) const {
  return [&net](int, double t, const SampleMatrix& x, SampleMatrix& out) {
    Net::Mat in = x.transpose().cast<float>();
    Net::Mat f;
    net.forward(t, in, f);
    out = f.transpose().cast<double>();
  };
}

SampleSet TreeDsbEngine::push_edge(DirectedEdge e, const SampleSet& init,
                                   std::uint64_t seed) const {
  const Net& net = model(e);
  const TimeSchedule& sched = schedule(e.from, e.to);
  TrajectoryBatch batch = net.output_is_zero()
                              ? brownian_forward(sched, init, seed, e)
                              : em_forward(drift_of(net), sched, init, seed, e);
  return SampleSet(std::move(batch.states.back()));
}

SampleSet TreeDsbEngine::push_path(const EdgePath& path, const SampleSet& init,
                                   std::uint64_t seed) const {
  SampleSet cur = init;
  for (std::size_t j = 0; j < path.size(); ++j) {
    cur = push_edge(path[j], cur, substream_key(seed, kTagPropagate, j));
  }
  return cur;
}

SampleSet TreeDsbEngine::draw_leaf(NodeId leaf, Eigen::Index count,
                                   std::uint64_t seed) const {
  auto it = cfg_.leaf_data.find(leaf);
  if (it == cfg_.leaf_data.end()) {
    throw Error(ErrorCode::UnknownLeaf,
                "node " + std::to_string(leaf) + " is not a data leaf");
  }
  return gather(it->second, choose_rows(it->second.count(), count, seed));
}

SampleSet TreeDsbEngine::start_data(NodeId node) const {
  if (auto it = cfg_.leaf_data.find(node); it != cfg_.leaf_data.end()) {
    return it->second;
  }
  return sample_gaussian(*cfg_.root.mu0, cfg_.root_samples,
                         substream_key(cfg_.seed, kTagRootSamples, 0));
}

void TreeDsbEngine::build_cache(DirectedEdge e, const SampleSet& data,
                                std::uint64_t key, int refresh,
                                TrainCache& cache) const {
  const auto k = static_cast<Eigen::Index>(cfg_.train.cache_size);
  const SampleSet init =
      data.count() > k
          ? gather(data, choose_rows(data.count(), k,
                                     substream_key(key, kTagSubset, refresh)))
          : data;
  const Net& fwd = model(e);
  const TimeSchedule& sched = schedule(e.from, e.to);
  const int n = sched.steps();
  const std::uint64_t sim_seed = substream_key(key, kTagSimulate, refresh);

  cache.rows = init.count();
  cache.x_next.assign(n, {});
  cache.delta.assign(n, {});
  if (fwd.output_is_zero()) {
    TrajectoryBatch b = brownian_forward(sched, init, sim_seed, e);
    for (int m = 0; m < n; ++m) cache.delta[m] = b.states[m] - b.states[m + 1];
    for (int m = 0; m < n; ++m) cache.x_next[m] = std::move(b.states[m + 1]);
    return;
  }
  std::vector<SampleMatrix> f_here(n);
  const BatchDrift base = drift_of(fwd);
  BatchDrift recording = [&](int m, double t, const SampleMatrix& x,
                             SampleMatrix& out) {
    base(m, t, x, out);
    f_here[m] = out;
  };
  TrajectoryBatch b = em_forward(recording, sched, init, sim_seed, e);
  SampleMatrix f_next;
  for (int m = 0; m < n; ++m) {
    base(m, sched.time(m), b.states[m + 1], f_next);
    cache.delta[m] = b.states[m] - b.states[m + 1] +
                     sched.gamma(m + 1) * (f_here[m] - f_next);
  }
  for (int m = 0; m < n; ++m) cache.x_next[m] = std::move(b.states[m + 1]);
}

EdgeTrainStats TreeDsbEngine::train_edge(DirectedEdge e, const SampleSet& data,
                                         std::uint64_t key) {
  const DirectedEdge back = e.reversed();
  Net& net = models_.at(back);
  AdamState<float>& opt = adam_.at(back);
  const TimeSchedule& sched = schedule(e.from, e.to);
  const int n = sched.steps();
  const auto& t = cfg_.train;

  EdgeTrainStats stats;
  stats.simulated = e;
  stats.trained = back;
  stats.steps = t.iters_per_ipf;

  RegressionBatch rb;
  rb.x.resize(t.batch, dim_);
  rb.delta.resize(t.batch, dim_);
  rb.gamma.resize(t.batch);
  rb.time.times.assign(sched.cumulative().begin(),
                       sched.cumulative().end() - 1);
  rb.time.time_index.resize(t.batch);

  std::mt19937_64 rng(substream_key(key, kTagBatch, 0));
  std::uniform_int_distribution<int> pick_step(0, n - 1);
  TrainCache cache;
  Net::Vec grad;
  std::vector<double> losses;
  losses.reserve(t.iters_per_ipf);
  int refresh = 0;
  for (int step = 0; step < t.iters_per_ipf; ++step) {
    if (step % t.refresh_every == 0) build_cache(e, data, key, refresh++, cache);
    std::uniform_int_distribution<Eigen::Index> pick_row(0, cache.rows - 1);
    for (int i = 0; i < t.batch; ++i) {
      const int m = pick_step(rng);
      const Eigen::Index r = pick_row(rng);
      rb.x.row(i) = cache.x_next[m].row(r);
      rb.delta.row(i) = cache.delta[m].row(r);
      rb.gamma[i] = sched.gamma(m + 1);
      rb.time.time_index[i] = n - m - 1;
    }
    double loss = 0.0;
    try {
      loss = loss_and_grad(net, rb, grad);
    } catch (const Error& err) {
      if (err.code() != ErrorCode::NonFinite) throw;
      throw Error(ErrorCode::TrainingDiverged,
                  "edge (" + std::to_string(back.from) + "," +
                      std::to_string(back.to) + ") step " +
                      std::to_string(step) + ": " + err.what());
    }
    adam_step(net.params(), grad, opt);
    losses.push_back(loss);
  }
  if (!losses.empty()) {
    stats.first_loss = losses.front();
    stats.min_loss = *std::min_element(losses.begin(), losses.end());
    const std::size_t w =
        std::min(losses.size(), static_cast<std::size_t>(t.loss_window));
    stats.final_loss =
        std::accumulate(losses.end() - w, losses.end(), 0.0) / double(w);
  }
  return stats;
}

IterationMetrics TreeDsbEngine::run_path(NodeId start, NodeId target) {
  IterationMetrics metrics;
  metrics.iteration = iteration_;
  metrics.cycle = cycle_;
  metrics.start = start;
  metrics.target = target;
  const EdgePath path = leaf_path(cfg_.tree, start, target);
  const std::uint64_t iter_key = substream_key(
      cfg_.seed, kTagIteration, static_cast<std::uint64_t>(iteration_));

  SampleSet data = start_data(start);
  for (std::size_t j = 0; j < path.size(); ++j) {
    const std::uint64_t edge_key = substream_key(iter_key, j, 0);
    metrics.edges.push_back(train_edge(path[j], data, edge_key));
    if (j + 1 < path.size()) {
      // The forward model of this edge is untouched by training, so the
      // next node's dataset is its push-forward.
      data = push_edge(path[j], data, substream_key(edge_key, kTagPropagate, 0));
    }
  }
  ++iteration_;
  current_ = target;
  return metrics;
}

IterationMetrics TreeDsbEngine::first_iteration_internal_root() {
  if (!internal_root()) {
    throw Error(ErrorCode::RootIsLeaf,
                "root " + std::to_string(cfg_.root.node) + " is a leaf");
  }
  if (iteration_ != 0) {
    invalid("the root iteration must come first");
  }
  IterationMetrics m = run_path(cfg_.root.node, order_[pos_]);
  ++pos_;
  return m;
}

IterationMetrics TreeDsbEngine::ipf_iteration() {
  IterationMetrics m = (internal_root() && iteration_ == 0)
                           ? first_iteration_internal_root()
                           : [&] {
                               auto r = run_path(current_, order_[pos_]);
                               ++pos_;
                               return r;
                             }();
  if (pos_ == order_.size()) {
    ++cycle_;
    pos_ = 0;
    start_cycle();
  }
  return m;
}

std::vector<IterationMetrics> TreeDsbEngine::run_cycles(
    int n_cycles, const IterationHook& hook) {
  if (n_cycles < 1) invalid("need at least one cycle");
  std::vector<IterationMetrics> out;
  const long total = static_cast<long>(n_cycles) * leaves_.size();
  for (long i = 0; i < total; ++i) {
    IterationMetrics m = ipf_iteration();
    if (hook) hook(m);
    out.push_back(std::move(m));
  }
  return out;
}

std::map<NodeId, SampleSet> TreeDsbEngine::sample_tree(
    NodeId start_leaf, Eigen::Index count, std::uint64_t seed) const {
  std::map<NodeId, SampleSet> out;
  out[start_leaf] = draw_leaf(start_leaf, count, substream_key(seed, 0, 0));
  const auto edges = breadth_first_edges(root_at(cfg_.tree, start_leaf));
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const auto& e = edges[i];
    out[e.to] = push_edge(e, out.at(e.from), substream_key(seed, i + 1, 0));
  }
  return out;
}

SampleSet TreeDsbEngine::barycenter_samples(NodeId start_leaf,
                                            Eigen::Index count,
                                            std::uint64_t seed) const {
  const auto center = cfg_.tree.star_center();
  if (!center) {
    throw Error(ErrorCode::NotStarTree, "tree has no central node");
  }
  SampleSet start = draw_leaf(start_leaf, count, substream_key(seed, 0, 0));
  return push_edge({start_leaf, *center}, start, substream_key(seed, 1, 0));
}

}  // namespace treedsb
