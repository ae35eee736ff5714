#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "treedsb/measures.hpp"
#include "treedsb/tree.hpp"

namespace treedsb {

// Probability vector on a finite point grid (G x dim points).
struct GridMeasure {
  Eigen::MatrixXd points;
  Eigen::VectorXd weights;

  // Throws NonPositiveInput unless weights are >= 0 and sum to 1 (1e-12).
  static GridMeasure make(Eigen::MatrixXd points, Eigen::VectorXd weights);
};

// G evenly spaced points on [lo, hi], as a G x 1 matrix.
Eigen::MatrixXd uniform_grid(double lo, double hi, int g);

// Gaussian density evaluated on the grid and renormalized.
GridMeasure discretize_gaussian(const Eigen::MatrixXd& points,
                                const GaussianMeasure& g);

double discrete_tv(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
// 0 log 0 = 0; +infinity when a puts mass where b has none.
double discrete_kl(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
// Same, after checking both measures live on the same grid (GridMismatch).
double discrete_tv(const GridMeasure& a, const GridMeasure& b);
double discrete_kl(const GridMeasure& a, const GridMeasure& b);

// Log-kernels log A(x, y) = -w |x - y|^2 / eps for every edge, plus the
// normalized log root reference. The reference coupling is
//   pi0(x) proportional to phi_r(x_r) * prod_{edges} A(x_v, x_v').
struct TreeKernelSet {
  UndirectedTree tree;
  Eigen::MatrixXd points;
  double epsilon = 0.0;
  NodeId root = 0;
  std::vector<Eigen::MatrixXd> log_kernels;  // indexed like tree.edges()
  Eigen::VectorXd log_phi_root;

  int grid_size() const {
    return static_cast<int>(points.rows());
  }
  const Eigen::MatrixXd& log_kernel(NodeId u, NodeId v) const;
};

TreeKernelSet make_tree_kernels(const UndirectedTree& tree,
                                const Eigen::MatrixXd& points, double epsilon,
                                NodeId root, const Eigen::VectorXd& phi_root);

using LeafMarginals = std::map<NodeId, Eigen::VectorXd>;

// Per-leaf log-potentials psi_i on the grid. The current coupling is
// pi0 * prod_i exp(psi_i(x_i)), renormalized.
struct PotentialSet {
  std::map<NodeId, Eigen::VectorXd> psi;
  long projections = 0;
  long cycles = 0;
};

// Leaves in ascending order with the root moved last when it is a leaf.
std::vector<NodeId> default_leaf_order(const UndirectedTree& tree, NodeId root);

struct SinkhornResult {
  PotentialSet potentials;
  std::vector<Eigen::VectorXd> node_marginals;  // indexed by node id
  std::vector<double> max_leaf_tv;              // after each cycle
  double final_tv = 0.0;
};

// Marginals of every node of pi0 * exp(sum psi) via two-pass message passing.
std::vector<Eigen::VectorXd> node_marginals_mp(const TreeKernelSet& k,
                                               const PotentialSet& p);

// Runs exactly `projections` single-leaf KL projections following `order`
// cyclically, by message passing.
SinkhornResult tree_mipf_mp(const TreeKernelSet& k, const LeafMarginals& mu,
                            long projections,
                            std::optional<std::vector<NodeId>> order = {});

// Full cycles until the worst leaf TV is <= tol. Throws NoConvergence after
// max_cycles.
SinkhornResult tree_sinkhorn_mp(const TreeKernelSet& k, const LeafMarginals& mu,
                                double tol = 1e-10, long max_cycles = 10000,
                                std::optional<std::vector<NodeId>> order = {});

// Dense log-tensor over G^|V| states; node v's coordinate has stride G^v.
struct DenseTensor {
  int nodes = 0;
  int grid = 0;
  Eigen::VectorXd log_p;
};

inline constexpr std::int64_t kDefaultDenseCap = 50'000'000;

// Normalized log pi0, and its log normalizer.
DenseTensor reference_tensor(const TreeKernelSet& k,
                             std::int64_t max_entries = kDefaultDenseCap,
                             double* log_normalizer = nullptr);
// log(pi0 * exp(sum psi)) normalized.
DenseTensor potential_tensor(const TreeKernelSet& k, const PotentialSet& p,
                             std::int64_t max_entries = kDefaultDenseCap);

Eigen::VectorXd tensor_marginal(const DenseTensor& t, NodeId v);
Eigen::MatrixXd tensor_pair_marginal(const DenseTensor& t, NodeId u, NodeId v);
double tensor_kl(const DenseTensor& p, const DenseTensor& q);

struct DenseMipfResult {
  std::vector<DenseTensor> iterates;  // pi^0..pi^n when kept
  DenseTensor last;
  std::vector<double> kl_increments;  // KL(pi^i | pi^{i-1}), i = 1..n
  std::vector<Eigen::VectorXd> node_marginals;
};

// mIPF on the full tensor. Throws InstanceTooLarge above max_entries.
DenseMipfResult dense_mipf(const TreeKernelSet& k, const LeafMarginals& mu,
                           long projections,
                           std::optional<std::vector<NodeId>> order = {},
                           bool keep_tensors = false,
                           std::int64_t max_entries = kDefaultDenseCap);

struct WpCheck {
  double lhs = 0.0;  // eps * KL(pi | pi0)
  double rhs = 0.0;  // tree decomposition
  double factorization_residual = 0.0;
};

// Compares eps KL(pi|pi0) with
//   sum_edges {w E|X_v - X_v'|^2 - eps H(pi_vv')} + eps sum_v |C_v| H(pi_v)
//   + eps KL(pi_r | phi_r) + eps log Z,
// with C_v the children of v when rooted at the kernel root and Z the
// normalizer of pi0. Throws NotTreeFactorized when pi differs from its tree
// reconstruction by more than factor_tol in log space.
WpCheck wp_objective_check(const DenseTensor& pi, const TreeKernelSet& k,
                           double factor_tol = 1e-8);

// Largest deviation of log(pi / pi0) from its best additive fit over leaf
// coordinates (constant plus one function per leaf).
double potential_form_residual(const DenseTensor& pi, const DenseTensor& pi0,
                               const UndirectedTree& tree);

}  // namespace treedsb
