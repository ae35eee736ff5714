#include "treedsb/discrete_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "treedsb/error.hpp"

namespace treedsb {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double log_sum_exp(const Eigen::VectorXd& a) {
  const double m = a.maxCoeff();
  if (m == -kInf) return -kInf;
  return m + std::log((a.array() - m).exp().sum());
}

// out(y) = log sum_x exp(a(x) + log_k(x, y)).
Eigen::VectorXd send(const Eigen::VectorXd& a, const Eigen::MatrixXd& log_k) {
  const Eigen::Index g = log_k.cols();
  Eigen::VectorXd out(g);
  for (Eigen::Index y = 0; y < g; ++y) {
    out(y) = log_sum_exp(a + log_k.col(y));
  }
  return out;
}

Eigen::VectorXd normalized_exp(const Eigen::VectorXd& log_b) {
  const double z = log_sum_exp(log_b);
  if (!std::isfinite(z)) {
    throw Error(ErrorCode::NumericalUnderflow,
                "all probability mass vanished during message passing");
  }
  return (log_b.array() - z).exp().matrix();
}

void check_grid(const TreeKernelSet& k, const LeafMarginals& mu,
                const std::vector<NodeId>& order) {
  for (NodeId leaf : order) {
    if (!k.tree.contains(leaf) || !k.tree.is_leaf(leaf)) {
      throw Error(ErrorCode::UnknownLeaf,
                  "node " + std::to_string(leaf) + " is not a leaf");
    }
    auto it = mu.find(leaf);
    if (it == mu.end()) {
      throw Error(ErrorCode::UnknownLeaf,
                  "no marginal for leaf " + std::to_string(leaf));
    }
    if (it->second.size() != k.grid_size()) {
      throw Error(ErrorCode::GridMismatch,
                  "marginal of leaf " + std::to_string(leaf) +
                      " has wrong grid size");
    }
  }
}

Eigen::VectorXd node_factor(const TreeKernelSet& k, const PotentialSet& p,
                            NodeId v) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(k.grid_size());
  if (auto it = p.psi.find(v); it != p.psi.end()) f += it->second;
  if (v == k.root) f += k.log_phi_root;
  return f;
}

void project(const TreeKernelSet& k, const LeafMarginals& mu, NodeId leaf,
             PotentialSet& p) {
  const auto marg = node_marginals_mp(k, p);
  const Eigen::VectorXd& target = mu.at(leaf);
  Eigen::VectorXd& psi = p.psi[leaf];
  if (psi.size() == 0) psi = Eigen::VectorXd::Zero(k.grid_size());
  for (Eigen::Index x = 0; x < psi.size(); ++x) {
    if (target(x) == 0.0) {
      psi(x) = -kInf;
    } else if (marg[leaf](x) == 0.0) {
      throw Error(ErrorCode::NumericalUnderflow,
                  "leaf " + std::to_string(leaf) +
                      " marginal vanished where the target has mass");
    } else {
      psi(x) += std::log(target(x)) - std::log(marg[leaf](x));
    }
  }
  ++p.projections;
}

double max_leaf_tv(const std::vector<Eigen::VectorXd>& marg,
                   const LeafMarginals& mu, const std::vector<NodeId>& order) {
  double worst = 0.0;
  for (NodeId leaf : order) {
    worst = std::max(worst, discrete_tv(marg[leaf], mu.at(leaf)));
  }
  return worst;
}

std::int64_t checked_size(int g, int nodes, std::int64_t cap) {
  std::int64_t n = 1;
  for (int i = 0; i < nodes; ++i) {
    if (n > cap / g) {
      throw Error(ErrorCode::InstanceTooLarge,
                  std::to_string(g) + "^" + std::to_string(nodes) +
                      " entries exceed the cap of " + std::to_string(cap));
    }
    n *= g;
  }
  return n;
}

// Walks all multi-indices of a G^n tensor; digit v has stride G^v.
template <typename Fn>
void for_each_state(int nodes, int g, std::int64_t size, Fn&& fn) {
  std::vector<int> x(nodes, 0);
  for (std::int64_t idx = 0; idx < size; ++idx) {
    fn(idx, x);
    for (int v = 0; v < nodes; ++v) {
      if (++x[v] < g) break;
      x[v] = 0;
    }
  }
}

void normalize(DenseTensor& t) {
  const double z = log_sum_exp(t.log_p);
  if (!std::isfinite(z)) {
    throw Error(ErrorCode::NumericalUnderflow, "tensor has no mass");
  }
  t.log_p.array() -= z;
}

double entropy(const Eigen::ArrayXd& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0.0) h -= p(i) * std::log(p(i));
  }
  return h;
}

}  // namespace

GridMeasure GridMeasure::make(Eigen::MatrixXd points, Eigen::VectorXd weights) {
  if (points.rows() != weights.size()) {
    throw Error(ErrorCode::GridMismatch, "one weight per grid point needed");
  }
  if ((weights.array() < 0.0).any() || !weights.allFinite()) {
    throw Error(ErrorCode::NonPositiveInput, "negative grid weight");
  }
  if (std::abs(weights.sum() - 1.0) > 1e-12) {
    throw Error(ErrorCode::NonPositiveInput, "grid weights do not sum to 1");
  }
  return {std::move(points), std::move(weights)};
}

Eigen::MatrixXd uniform_grid(double lo, double hi, int g) {
  if (g < 2 || !(hi > lo)) {
    throw Error(ErrorCode::NonPositiveInput, "grid needs g >= 2 and hi > lo");
  }
  Eigen::MatrixXd p(g, 1);
  for (int i = 0; i < g; ++i) p(i, 0) = lo + (hi - lo) * i / (g - 1);
  return p;
}

GridMeasure discretize_gaussian(const Eigen::MatrixXd& points,
                                const GaussianMeasure& g) {
  if (points.cols() != g.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "grid and Gaussian dims differ");
  }
  const Eigen::MatrixXd prec = g.cov().inverse();
  Eigen::VectorXd logw(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::VectorXd d = points.row(i).transpose() - g.mean();
    logw(i) = -0.5 * d.dot(prec * d);
  }
  Eigen::VectorXd w = normalized_exp(logw);
  w /= w.sum();
  return GridMeasure::make(points, w);
}

double discrete_tv(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::GridMismatch, "vectors have different lengths");
  }
  return 0.5 * (a - b).cwiseAbs().sum();
}

double discrete_kl(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::GridMismatch, "vectors have different lengths");
  }
  double kl = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a(i) == 0.0) continue;
    if (b(i) == 0.0) return kInf;
    kl += a(i) * std::log(a(i) / b(i));
  }
  return kl;
}

namespace {

void check_same_grid(const GridMeasure& a, const GridMeasure& b) {
  if (a.points.rows() != b.points.rows() ||
      a.points.cols() != b.points.cols() ||
      (a.points - b.points).cwiseAbs().maxCoeff() > 1e-12) {
    throw Error(ErrorCode::GridMismatch, "measures live on different grids");
  }
}

}  // namespace

double discrete_tv(const GridMeasure& a, const GridMeasure& b) {
  check_same_grid(a, b);
  return discrete_tv(a.weights, b.weights);
}

double discrete_kl(const GridMeasure& a, const GridMeasure& b) {
  check_same_grid(a, b);
  return discrete_kl(a.weights, b.weights);
}

const Eigen::MatrixXd& TreeKernelSet::log_kernel(NodeId u, NodeId v) const {
  const int idx = tree.edge_index(u, v);
  if (idx < 0) {
    throw Error(ErrorCode::UnknownNode, "no edge {" + std::to_string(u) + "," +
                                            std::to_string(v) + "}");
  }
  return log_kernels[idx];
}

TreeKernelSet make_tree_kernels(const UndirectedTree& tree,
                                const Eigen::MatrixXd& points, double epsilon,
                                NodeId root, const Eigen::VectorXd& phi_root) {
  if (!(epsilon > 0.0)) {
    throw Error(ErrorCode::NonPositiveInput, "epsilon must be positive");
  }
  if (!tree.contains(root)) {
    throw Error(ErrorCode::UnknownNode, "root " + std::to_string(root));
  }
  const Eigen::Index g = points.rows();
  if (phi_root.size() != g) {
    throw Error(ErrorCode::GridMismatch, "root reference has wrong size");
  }
  if ((phi_root.array() < 0.0).any() || !(phi_root.sum() > 0.0)) {
    throw Error(ErrorCode::NonPositiveInput, "root reference must be >= 0");
  }
  TreeKernelSet k{tree, points, epsilon, root, {}, {}};
  Eigen::MatrixXd sq(g, g);
  for (Eigen::Index a = 0; a < g; ++a) {
    for (Eigen::Index b = 0; b < g; ++b) {
      sq(a, b) = (points.row(a) - points.row(b)).squaredNorm();
    }
  }
  for (const auto& e : tree.edges()) {
    k.log_kernels.push_back(-e.weight * sq / epsilon);
  }
  const Eigen::VectorXd phi = phi_root / phi_root.sum();
  k.log_phi_root = phi.array().log().matrix();
  return k;
}

std::vector<NodeId> default_leaf_order(const UndirectedTree& tree,
                                       NodeId root) {
  std::vector<NodeId> order = tree.leaves();
  auto it = std::find(order.begin(), order.end(), root);
  if (it != order.end()) {
    order.erase(it);
    order.push_back(root);
  }
  return order;
}

std::vector<Eigen::VectorXd> node_marginals_mp(const TreeKernelSet& k,
                                               const PotentialSet& p) {
  const DirectedTree dt = root_at(k.tree, k.root);
  const int n = k.tree.node_count();
  std::vector<Eigen::VectorXd> factor(n);
  for (NodeId v = 0; v < n; ++v) factor[v] = node_factor(k, p, v);

  // Upward pass: children before parents.
  std::vector<Eigen::VectorXd> up(n);
  std::vector<Eigen::VectorXd> inner(n);  // factor + all child messages
  const auto& edges = dt.edges();
  for (NodeId v = 0; v < n; ++v) inner[v] = factor[v];
  for (auto it = edges.rbegin(); it != edges.rend(); ++it) {
    const NodeId child = it->to;
    const NodeId parent = it->from;
    up[child] = send(inner[child], k.log_kernel(child, parent));
    inner[parent] += up[child];
  }
  // Downward pass: parents before children.
  std::vector<Eigen::VectorXd> belief(n);
  std::vector<Eigen::VectorXd> down(n);
  belief[k.root] = inner[k.root];
  for (const auto& e : edges) {
    const Eigen::VectorXd outgoing = belief[e.from] - up[e.to];
    down[e.to] = send(outgoing, k.log_kernel(e.from, e.to));
    belief[e.to] = inner[e.to] + down[e.to];
  }
  std::vector<Eigen::VectorXd> marg(n);
  for (NodeId v = 0; v < n; ++v) marg[v] = normalized_exp(belief[v]);
  return marg;
}

SinkhornResult tree_mipf_mp(const TreeKernelSet& k, const LeafMarginals& mu,
                            long projections,
                            std::optional<std::vector<NodeId>> order) {
  const std::vector<NodeId> ord =
      order ? *order : default_leaf_order(k.tree, k.root);
  check_grid(k, mu, ord);
  SinkhornResult res;
  for (NodeId leaf : ord) {
    res.potentials.psi[leaf] = Eigen::VectorXd::Zero(k.grid_size());
  }
  for (long i = 0; i < projections; ++i) {
    project(k, mu, ord[i % ord.size()], res.potentials);
    if ((i + 1) % static_cast<long>(ord.size()) == 0) {
      ++res.potentials.cycles;
      res.max_leaf_tv.push_back(
          max_leaf_tv(node_marginals_mp(k, res.potentials), mu, ord));
    }
  }
  res.node_marginals = node_marginals_mp(k, res.potentials);
  res.final_tv = max_leaf_tv(res.node_marginals, mu, ord);
  return res;
}

SinkhornResult tree_sinkhorn_mp(const TreeKernelSet& k, const LeafMarginals& mu,
                                double tol, long max_cycles,
                                std::optional<std::vector<NodeId>> order) {
  const std::vector<NodeId> ord =
      order ? *order : default_leaf_order(k.tree, k.root);
  check_grid(k, mu, ord);
  SinkhornResult res;
  for (NodeId leaf : ord) {
    res.potentials.psi[leaf] = Eigen::VectorXd::Zero(k.grid_size());
  }
  for (long c = 0; c < max_cycles; ++c) {
    for (NodeId leaf : ord) project(k, mu, leaf, res.potentials);
    ++res.potentials.cycles;
    res.node_marginals = node_marginals_mp(k, res.potentials);
    res.final_tv = max_leaf_tv(res.node_marginals, mu, ord);
    res.max_leaf_tv.push_back(res.final_tv);
    if (res.final_tv <= tol) return res;
  }
  throw Error(ErrorCode::NoConvergence,
              "leaf TV " + std::to_string(res.final_tv) + " above " +
                  std::to_string(tol) + " after " +
                  std::to_string(max_cycles) + " cycles");
}

DenseTensor reference_tensor(const TreeKernelSet& k, std::int64_t max_entries,
                             double* log_normalizer) {
  const int n = k.tree.node_count();
  const int g = k.grid_size();
  const std::int64_t size = checked_size(g, n, max_entries);
  DenseTensor t{n, g, Eigen::VectorXd(size)};
  const auto& edges = k.tree.edges();
  for_each_state(n, g, size, [&](std::int64_t idx, const std::vector<int>& x) {
    double lp = k.log_phi_root(x[k.root]);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      lp += k.log_kernels[e](x[edges[e].u], x[edges[e].v]);
    }
    t.log_p(idx) = lp;
  });
  const double z = log_sum_exp(t.log_p);
  if (log_normalizer != nullptr) *log_normalizer = z;
  t.log_p.array() -= z;
  return t;
}

DenseTensor potential_tensor(const TreeKernelSet& k, const PotentialSet& p,
                             std::int64_t max_entries) {
  DenseTensor t = reference_tensor(k, max_entries);
  const std::int64_t size = t.log_p.size();
  for_each_state(t.nodes, t.grid, size,
                 [&](std::int64_t idx, const std::vector<int>& x) {
                   for (const auto& [leaf, psi] : p.psi) {
                     t.log_p(idx) += psi(x[leaf]);
                   }
                 });
  normalize(t);
  return t;
}

Eigen::VectorXd tensor_marginal(const DenseTensor& t, NodeId v) {
  if (v < 0 || v >= t.nodes) {
    throw Error(ErrorCode::UnknownNode, "node " + std::to_string(v));
  }
  std::int64_t stride = 1;
  for (int i = 0; i < v; ++i) stride *= t.grid;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(t.grid);
  const double* lp = t.log_p.data();
  const std::int64_t size = t.log_p.size();
  for (std::int64_t block = 0; block < size; block += stride * t.grid) {
    for (int x = 0; x < t.grid; ++x) {
      const double* run = lp + block + x * stride;
      double acc = 0.0;
      for (std::int64_t j = 0; j < stride; ++j) acc += std::exp(run[j]);
      m(x) += acc;
    }
  }
  return m;
}

Eigen::MatrixXd tensor_pair_marginal(const DenseTensor& t, NodeId u,
                                     NodeId v) {
  std::int64_t su = 1;
  std::int64_t sv = 1;
  for (int i = 0; i < u; ++i) su *= t.grid;
  for (int i = 0; i < v; ++i) sv *= t.grid;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(t.grid, t.grid);
  for (std::int64_t idx = 0; idx < t.log_p.size(); ++idx) {
    m((idx / su) % t.grid, (idx / sv) % t.grid) += std::exp(t.log_p(idx));
  }
  return m;
}

double tensor_kl(const DenseTensor& p, const DenseTensor& q) {
  if (p.log_p.size() != q.log_p.size()) {
    throw Error(ErrorCode::GridMismatch, "tensors have different sizes");
  }
  double kl = 0.0;
  for (std::int64_t i = 0; i < p.log_p.size(); ++i) {
    if (p.log_p(i) == -kInf) continue;
    if (q.log_p(i) == -kInf) return kInf;
    kl += std::exp(p.log_p(i)) * (p.log_p(i) - q.log_p(i));
  }
  return kl;
}

DenseMipfResult dense_mipf(const TreeKernelSet& k, const LeafMarginals& mu,
                           long projections,
                           std::optional<std::vector<NodeId>> order,
                           bool keep_tensors, std::int64_t max_entries) {
  const std::vector<NodeId> ord =
      order ? *order : default_leaf_order(k.tree, k.root);
  check_grid(k, mu, ord);
  DenseMipfResult res;
  res.last = reference_tensor(k, max_entries);
  if (keep_tensors) res.iterates.push_back(res.last);

  std::int64_t stride_of[64];
  {
    std::int64_t s = 1;
    for (int v = 0; v < res.last.nodes; ++v) {
      stride_of[v] = s;
      s *= res.last.grid;
    }
  }
  for (long i = 0; i < projections; ++i) {
    const NodeId leaf = ord[i % ord.size()];
    const Eigen::VectorXd marg = tensor_marginal(res.last, leaf);
    const Eigen::VectorXd& target = mu.at(leaf);
    Eigen::VectorXd delta(marg.size());
    for (Eigen::Index x = 0; x < marg.size(); ++x) {
      if (target(x) == 0.0) {
        delta(x) = -kInf;
      } else if (marg(x) == 0.0) {
        throw Error(ErrorCode::NumericalUnderflow,
                    "dense marginal vanished where the target has mass");
      } else {
        delta(x) = std::log(target(x)) - std::log(marg(x));
      }
    }
    DenseTensor next = res.last;
    const std::int64_t stride = stride_of[leaf];
    double* lp = next.log_p.data();
    for (std::int64_t block = 0; block < next.log_p.size(); block += stride * next.grid) {
      for (int x = 0; x < next.grid; ++x) {
        double* run = lp + block + x * stride;
        for (std::int64_t j = 0; j < stride; ++j) run[j] += delta(x);
      }
    }
    normalize(next);
    res.kl_increments.push_back(tensor_kl(next, res.last));
    res.last = std::move(next);
    if (keep_tensors) res.iterates.push_back(res.last);
  }
  res.node_marginals.resize(res.last.nodes);
  for (int v = 0; v < res.last.nodes; ++v) {
    res.node_marginals[v] = tensor_marginal(res.last, v);
  }
  return res;
}

WpCheck wp_objective_check(const DenseTensor& pi, const TreeKernelSet& k,
                           double factor_tol) {
  double log_z = 0.0;
  const DenseTensor pi0 = reference_tensor(k, pi.log_p.size(), &log_z);
  if (pi0.log_p.size() != pi.log_p.size()) {
    throw Error(ErrorCode::GridMismatch, "coupling has the wrong shape");
  }
  const int n = pi.nodes;
  const DirectedTree dt = root_at(k.tree, k.root);

  std::vector<Eigen::VectorXd> marg(n);
  for (int v = 0; v < n; ++v) marg[v] = tensor_marginal(pi, v);
  std::vector<Eigen::MatrixXd> pair;
  for (const auto& e : dt.edges()) {
    pair.push_back(tensor_pair_marginal(pi, e.from, e.to));
  }

  // Tree reconstruction pi_r * prod pi_{vv'} / pi_v must match pi.
  double resid = 0.0;
  for_each_state(n, pi.grid, pi.log_p.size(),
                 [&](std::int64_t idx, const std::vector<int>& x) {
                   double lf = std::log(marg[k.root](x[k.root]));
                   for (std::size_t e = 0; e < pair.size(); ++e) {
                     const auto& de = dt.edges()[e];
                     lf += std::log(pair[e](x[de.from], x[de.to])) -
                           std::log(marg[de.from](x[de.from]));
                   }
                   const double lp = pi.log_p(idx);
                   if (lp == -kInf && lf == -kInf) return;
                   resid = std::max(resid, std::abs(lp - lf));
                 });
  if (!(resid <= factor_tol)) {
    throw Error(ErrorCode::NotTreeFactorized,
                "log-factorization residual " + std::to_string(resid));
  }

  const double eps = k.epsilon;
  WpCheck out;
  out.factorization_residual = resid;
  out.lhs = eps * tensor_kl(pi, pi0);

  double rhs = 0.0;
  for (std::size_t e = 0; e < pair.size(); ++e) {
    const auto& de = dt.edges()[e];
    const double w = k.tree.weight(de.from, de.to);
    double cost = 0.0;
    for (int a = 0; a < pi.grid; ++a) {
      for (int b = 0; b < pi.grid; ++b) {
        cost += pair[e](a, b) *
                (k.points.row(a) - k.points.row(b)).squaredNorm();
      }
    }
    rhs += w * cost - eps * entropy(pair[e].array().reshaped());
  }
  for (int v = 0; v < n; ++v) {
    const auto c = static_cast<double>(dt.children(v).size());
    rhs += eps * c * entropy(marg[v].array());
  }
  const Eigen::VectorXd phi = k.log_phi_root.array().exp().matrix();
  rhs += eps * discrete_kl(marg[k.root], phi);
  rhs += eps * log_z;
  out.rhs = rhs;
  return out;
}

double potential_form_residual(const DenseTensor& pi, const DenseTensor& pi0,
                               const UndirectedTree& tree) {
  const Eigen::VectorXd f = pi.log_p - pi0.log_p;
  if (!f.allFinite()) {
    throw Error(ErrorCode::NonFinite,
                "log density ratio is not finite everywhere");
  }
  const std::vector<NodeId> leaves = tree.leaves();
  const double c = f.mean();
  std::vector<Eigen::VectorXd> effect;
  for (NodeId leaf : leaves) {
    std::int64_t stride = 1;
    for (int i = 0; i < leaf; ++i) stride *= pi.grid;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(pi.grid);
    for (std::int64_t idx = 0; idx < f.size(); ++idx) {
      sum((idx / stride) % pi.grid) += f(idx);
    }
    effect.push_back(sum / (static_cast<double>(f.size()) / pi.grid) -
                     Eigen::VectorXd::Constant(pi.grid, c));
  }
  double resid = 0.0;
  for_each_state(pi.nodes, pi.grid, f.size(),
                 [&](std::int64_t idx, const std::vector<int>& x) {
                   double fit = c;
                   for (std::size_t i = 0; i < leaves.size(); ++i) {
                     fit += effect[i](x[leaves[i]]);
                   }
                   resid = std::max(resid, std::abs(f(idx) - fit));
                 });
  return resid;
}

}  // namespace treedsb
