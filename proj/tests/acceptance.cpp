// Acceptance suite: one pass/fail line per criterion.
//   acceptance                  run every criterion
//   acceptance --criterion 6    run one (repeatable)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "property_checks.hpp"
#include "treedsb/discrete_oracle.hpp"
#include "treedsb/drift_net.hpp"
#include "treedsb/engine.hpp"
#include "treedsb/error.hpp"
#include "treedsb/gaussian.hpp"
#include "treedsb/measures.hpp"
#include "treedsb/rng.hpp"
#include "treedsb/schedule.hpp"

using namespace treedsb;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// Five nodes: 0-1, 1-2, 1-3, 0-4 with leaves {2, 3, 4}.
UndirectedTree five_node_tree(double w01, double w12, double w13, double w04) {
  return UndirectedTree::build(
      5, {{0, 1, w01}, {1, 2, w12}, {1, 3, w13}, {0, 4, w04}});
}

Eigen::VectorXd random_histogram(int g, std::mt19937_64& rng) {
  std::gamma_distribution<double> gam(2.0, 1.0);
  Eigen::VectorXd h(g);
  for (int i = 0; i < g; ++i) h(i) = gam(rng) + 1e-3;
  return h / h.sum();
}

struct DiscreteInstance {
  TreeKernelSet kernels;
  LeafMarginals mu;
};

DiscreteInstance random_five_node(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uw(0.5, 2.0), ueps(0.3, 1.0);
  const UndirectedTree tree = five_node_tree(uw(rng), uw(rng), uw(rng), uw(rng));
  const Eigen::MatrixXd pts = uniform_grid(-1.0, 1.0, 10);
  LeafMarginals mu;
  for (NodeId leaf : {2, 3, 4}) mu[leaf] = random_histogram(10, rng);
  const NodeId root = static_cast<NodeId>(rng() % 5);
  const Eigen::VectorXd phi =
      tree.is_leaf(root) ? Eigen::VectorXd(mu[root]) : random_histogram(10, rng);
  return {make_tree_kernels(tree, pts, ueps(rng), root, phi), mu};
}

// The fixed instance used for convergence.
DiscreteInstance fixed_five_node_instance() {
  const UndirectedTree tree = five_node_tree(1.0, 0.5, 2.0, 1.0);
  const Eigen::MatrixXd pts = uniform_grid(-1.0, 1.0, 10);
  auto bump = [&](double m, double v) {
    return discretize_gaussian(pts, GaussianMeasure(Eigen::VectorXd::Constant(1, m),
                                                    Eigen::MatrixXd::Constant(1, 1, v)))
        .weights;
  };
  LeafMarginals mu;
  mu[2] = bump(-0.5, 0.1);
  mu[3] = bump(0.2, 0.05);
  mu[4] = bump(0.6, 0.2);
  return {make_tree_kernels(tree, pts, 0.5, 0, bump(0.0, 0.5)), mu};
}

double max_node_diff(const std::vector<Eigen::VectorXd>& a,
                     const std::vector<Eigen::VectorXd>& b) {
  double worst = 0.0;
  for (std::size_t v = 0; v < a.size(); ++v) {
    worst = std::max(worst, (a[v] - b[v]).cwiseAbs().maxCoeff());
  }
  return worst;
}

Outcome criterion_1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  const int instances = 30;
  for (int i = 0; i < instances; ++i) {
    const DiscreteInstance inst = random_five_node(rng);
    const auto order = default_leaf_order(inst.kernels.tree, inst.kernels.root);
    const SinkhornResult mp = tree_sinkhorn_mp(inst.kernels, inst.mu, 1e-12, 5000, order);
    const long n = mp.potentials.projections;
    const DenseMipfResult dense = dense_mipf(inst.kernels, inst.mu, n, order);
    worst = std::max(worst, max_node_diff(mp.node_marginals, dense.node_marginals));
    // One early, far-from-converged iterate as well.
    const long k = 1 + static_cast<long>(rng() % 4);
    const auto part = tree_mipf_mp(inst.kernels, inst.mu, k, order);
    const DenseMipfResult early = dense_mipf(inst.kernels, inst.mu, k, order);
    worst = std::max(worst, max_node_diff(part.node_marginals, early.node_marginals));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-8 && secs < 10.0,
          fmt("%d random instances, max |mp - dense| = %.3g (<= 1e-8), %.2f s (< 10 s)",
              instances, worst, secs)};
}

Outcome criterion_2() {
  const DiscreteInstance inst = fixed_five_node_instance();
  const auto& k = inst.kernels;
  const auto order = default_leaf_order(k.tree, k.root);
  SinkhornResult run;
  try {
    run = tree_sinkhorn_mp(k, inst.mu, 1e-8, 500, order);
  } catch (const Error& e) {
    return {false, std::string("no convergence within 500 cycles: ") + e.what()};
  }
  const long cycles = run.potentials.cycles;
  const long n = run.potentials.projections;

  const DenseMipfResult dense = dense_mipf(k, inst.mu, n, order);
  const DenseTensor pi0 = reference_tensor(k);
  const SinkhornResult star_run = tree_mipf_mp(k, inst.mu, 10 * n, order);
  const DenseTensor pi_star = potential_tensor(k, star_run.potentials);

  double partial = 0.0;
  bool nonnegative = true;
  for (double kl : dense.kl_increments) {
    nonnegative = nonnegative && kl >= -1e-14 && std::isfinite(kl);
    partial += kl;
  }
  const double lhs = tensor_kl(pi_star, pi0);
  const double rhs = tensor_kl(pi_star, dense.last) + partial;
  const double gap = std::abs(lhs - rhs);
  const bool pass = run.final_tv < 1e-8 && cycles <= 500 && nonnegative &&
                    partial <= lhs + 1e-8 && gap <= 1e-8;
  return {pass, fmt("max leaf TV %.3g after %ld cycles (<= 500); sum KL increments %.6g <= "
                    "KL(pi*|pi0) %.6g; Pythagorean gap %.3g (<= 1e-8)",
                    run.final_tv, cycles, partial, lhs, gap)};
}

Outcome criterion_3() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> uw(0.3, 2.0), ueps(0.2, 1.0);
  double worst_star = 0.0, worst_chain = 0.0;
  const int instances = 10;
  for (int i = 0; i < instances; ++i) {
    const Eigen::MatrixXd pts = uniform_grid(-1.0, 1.0, 10);
    {
      const UndirectedTree star =
          UndirectedTree::build(4, {{0, 1, uw(rng)}, {0, 2, uw(rng)}, {0, 3, uw(rng)}});
      LeafMarginals mu;
      for (NodeId l : {1, 2, 3}) mu[l] = random_histogram(10, rng);
      const NodeId root = (i % 2) ? 0 : 1 + static_cast<NodeId>(rng() % 3);
      const Eigen::VectorXd phi = root == 0 ? random_histogram(10, rng) : mu[root];
      const TreeKernelSet k = make_tree_kernels(star, pts, ueps(rng), root, phi);
      const SinkhornResult r = tree_sinkhorn_mp(k, mu, 1e-13, 100000);
      const WpCheck wp = wp_objective_check(potential_tensor(k, r.potentials), k);
      worst_star = std::max(worst_star, std::abs(wp.lhs - wp.rhs));
    }
    {
      const UndirectedTree chain = UndirectedTree::build(3, {{0, 1, uw(rng)}, {1, 2, uw(rng)}});
      LeafMarginals mu;
      for (NodeId l : {0, 2}) mu[l] = random_histogram(10, rng);
      const NodeId root = (i % 2) ? 1 : 2;
      const Eigen::VectorXd phi = root == 1 ? random_histogram(10, rng) : mu[root];
      const TreeKernelSet k = make_tree_kernels(chain, pts, ueps(rng), root, phi);
      const SinkhornResult r = tree_sinkhorn_mp(k, mu, 1e-13, 100000);
      const WpCheck wp = wp_objective_check(potential_tensor(k, r.potentials), k);
      worst_chain = std::max(worst_chain, std::abs(wp.lhs - wp.rhs));
    }
  }
  return {worst_star <= 1e-8 && worst_chain <= 1e-8,
          fmt("%d stars: max gap %.3g; %d chains: max gap %.3g (<= 1e-8)", instances,
              worst_star, instances, worst_chain)};
}

Outcome criterion_4() {
  using NetD = DriftNet<double>;
  const TimeSchedule sched = make_schedule(4, 1e-3, 1.0);
  std::mt19937_64 rng(404);
  std::normal_distribution<double> normal;
  std::string detail;
  bool pass = true;
  for (Activation act : {Activation::Silu, Activation::Tanh, Activation::LeakyRelu}) {
    NetD net(3, act, 41);
    std::uniform_real_distribution<double> unif(-0.2, 0.2);
    const auto& last = net.layers().back();
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(last.out) * last.in + last.out; ++k) {
      net.params()(last.offset + k) = unif(rng);
    }
    MeanMatchBatch mb;
    const int b = 32;
    mb.x_prev.resize(b, 3);
    mb.x_next.resize(b, 3);
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < 3; ++j) {
        mb.x_prev(i, j) = normal(rng);
        mb.x_next(i, j) = mb.x_prev(i, j) + 0.5 * normal(rng);
      }
      mb.steps.push_back(static_cast<int>(rng() % 4));
    }
    const RegressionBatch rb = make_regression_batch(identity_mean_fn(), sched, mb);
    NetD::Vec grad;
    loss_and_grad(net, rb, grad);

    std::uniform_int_distribution<Eigen::Index> pick(0, net.param_count() - 1);
    const int coords = 200;
    int good = 0;
    for (int i = 0; i < coords; ++i) {
      const Eigen::Index k = pick(rng);
      const double h = 1e-5 * std::max(1.0, std::abs(net.params()(k)));
      NetD plus = net, minus = net;
      plus.params()(k) += h;
      minus.params()(k) -= h;
      const double fd = (mean_match_loss(plus, rb) - mean_match_loss(minus, rb)) / (2 * h);
      const double denom = std::max(std::abs(fd), std::abs(grad(k)));
      const double rel = denom == 0.0 ? 0.0 : std::abs(fd - grad(k)) / denom;
      if (rel <= 1e-4) ++good;
    }
    pass = pass && good >= 190;
    detail += fmt("%s %d/200; ", std::string(activation_name(act)).c_str(), good);
  }

  // Zero-initialized float network through the generic EM path.
  const DriftNet<float> zero(2, Activation::Silu, 9);
  const TimeSchedule s = make_schedule(50, 1e-5, 0.15);
  SampleMatrix x0(300, 2);
  for (Eigen::Index i = 0; i < x0.size(); ++i) x0.data()[i] = normal(rng);
  BatchDrift drift = [&](int, double t, const SampleMatrix& x, SampleMatrix& out) {
    DriftNet<float>::Mat in = x.transpose().cast<float>();
    DriftNet<float>::Mat f;
    zero.forward(t, in, f);
    out = f.transpose().cast<double>();
  };
  const TrajectoryBatch em = em_forward(drift, s, SampleSet(x0), 99);
  const TrajectoryBatch bm = brownian_forward(s, SampleSet(x0), 99);
  bool equal = true;
  for (int m = 0; m <= 50; ++m) {
    equal = equal && (em.states[m].array() == bm.states[m].array()).all();
  }
  pass = pass && equal;
  detail += equal ? "zero net sampling bit-equal to Brownian" : "zero net sampling differs";
  return {pass, "gradient coordinates within 1e-4 (need >= 190): " + detail};
}

Outcome criterion_5() {
  const auto t0 = Clock::now();
  const double horizon = 0.15;
  const double eps = 0.1;
  EngineConfig cfg;
  cfg.tree = UndirectedTree::build(2, {{0, 1, eps / (2.0 * horizon)}});
  cfg.epsilon = eps;
  cfg.leaf_data[1] = sample_gaussian(GaussianMeasure::standard(2), 10000, 51);
  cfg.leaf_data[0] = sample_gaussian(GaussianMeasure::standard(2), 100, 52);
  cfg.root.node = 1;
  cfg.train.batch = 512;
  cfg.train.iters_per_ipf = 8000;
  cfg.train.cache_size = 4096;
  cfg.train.lr = 3e-4;
  cfg.seed = 5;
  TreeDsbEngine eng(cfg);
  eng.ipf_iteration();  // Brownian 1 -> 0, trains the reverse model (0, 1)
  const auto& net = eng.model({0, 1});
  const TimeSchedule& s = eng.schedule(1, 0);
  const int n = s.steps();

  const TrajectoryBatch fresh =
      brownian_forward(s, sample_gaussian(GaussianMeasure::standard(2), 4000, 53), 54);
  double worst_mean = 0.0, worst_drift = 0.0, avg_drift = 0.0;
  for (int m = 0; m < n; ++m) {
    const SampleMatrix& x = fresh.states[m + 1];
    const double ratio = (1.0 + s.time(m)) / (1.0 + s.time(m + 1));
    double rel_mean = 0.0, rel_drift = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Eigen::VectorXd xi = x.row(i).transpose();
      const Eigen::VectorXd pred = mean_fn(net, s, n - m - 1, xi);
      const Eigen::VectorXd truth = ratio * xi;
      rel_mean += (pred - truth).norm() / truth.norm();
      rel_drift += (pred - truth).norm() / (truth - xi).norm();
    }
    rel_mean /= static_cast<double>(x.rows());
    rel_drift /= static_cast<double>(x.rows());
    worst_mean = std::max(worst_mean, rel_mean);
    worst_drift = std::max(worst_drift, rel_drift);
    avg_drift += rel_drift / n;
  }
  const double secs = seconds_since(t0);
  return {worst_mean <= 0.05 && secs < 300.0,
          fmt("worst step batch-averaged relative mean error %.3g%% (<= 5%%), %.0f s "
              "(< 300 s); drift-level error mean %.1f%% worst %.1f%%",
              100 * worst_mean, secs, 100 * avg_drift, 100 * worst_drift)};
}

struct GaussianStar {
  EngineConfig cfg;
  std::vector<GaussianMeasure> leaves;
  GaussianMeasure barycenter;
};

GaussianStar gaussian_star(int d) {
  std::vector<GaussianMeasure> gs;
  EngineConfig cfg;
  cfg.tree = UndirectedTree::build(4, {{0, 1, 1.0 / 3}, {0, 2, 1.0 / 3}, {0, 3, 1.0 / 3}});
  for (int k = 1; k <= 3; ++k) {
    gs.push_back(gen_random_spd(d, 10.0, 0.3, 1000 + k));
    cfg.leaf_data[k] = sample_gaussian(gs.back(), 10000, 50 + k);
  }
  cfg.epsilon = 0.1;
  cfg.root.node = 0;
  cfg.root.mu0 = reference_gaussian_design(gs, 1.0);
  const std::vector<double> w(3, 1.0 / 3);
  GaussianMeasure bary = gaussian_barycenter_fixed_point(gs, w).barycenter;
  return {std::move(cfg), std::move(gs), std::move(bary)};
}

Outcome criterion_6() {
  const auto t0 = Clock::now();
  GaussianStar star = gaussian_star(2);
  star.cfg.train.batch = 512;
  star.cfg.train.iters_per_ipf = 1000;
  star.cfg.train.cache_size = 2048;
  star.cfg.seed = 1;
  TreeDsbEngine eng(star.cfg);
  double best = 1e300, last = 0.0;
  long best_iter = -1;
  eng.run_cycles(10, [&](IterationMetrics& m) {
    const SampleSet c = eng.barycenter_samples(
        m.target, 10000, substream_key(606, static_cast<std::uint64_t>(m.iteration), 0));
    m.uvp = bw2_uvp(c, star.barycenter);
    last = *m.uvp;
    if (*m.uvp < best) {
      best = *m.uvp;
      best_iter = m.iteration;
    }
    std::printf("  iteration %ld leaf %d uvp %.3f%% (%.0f s)\n", m.iteration, m.target, *m.uvp,
                seconds_since(t0));
    std::fflush(stdout);
  });
  double worst_leaf = 0.0;
  for (NodeId l : {1, 2, 3}) {
    worst_leaf = std::max(worst_leaf, bw2_uvp(eng.barycenter_samples(l, 10000, 607), star.barycenter));
  }
  const double secs = seconds_since(t0);
  return {best <= 3.0 && secs <= 1800.0,
          fmt("best-iteration BW2-UVP %.3f%% at iteration %ld (<= 3%%), %.0f s (<= 1800 s); "
              "final iteration %.3f%%, worst start leaf at the end %.3f%%",
              best, best_iter, secs, last, worst_leaf)};
}

Outcome criterion_7() {
  const auto t0 = Clock::now();
  EngineConfig cfg;
  cfg.tree = UndirectedTree::build(4, {{0, 1, 1.0 / 3}, {0, 2, 1.0 / 3}, {0, 3, 1.0 / 3}});
  cfg.leaf_data[1] = gen_toy2d(ToyKind::SwissRoll, 5000, 0.05, 71);
  cfg.leaf_data[2] = gen_toy2d(ToyKind::Circle, 5000, 0.05, 72);
  cfg.leaf_data[3] = gen_toy2d(ToyKind::Moons, 5000, 0.05, 73);
  std::vector<GaussianMeasure> fitted;
  std::map<NodeId, GaussianMeasure> data_moments;
  for (NodeId l : {1, 2, 3}) {
    const Moments mo = empirical_moments(cfg.leaf_data[l]);
    fitted.emplace_back(mo.mean, mo.cov);
    data_moments.emplace(l, fitted.back());
  }
  cfg.epsilon = 0.1;
  cfg.root.node = 0;
  cfg.root.mu0 = reference_gaussian_design(fitted, 1.0);
  cfg.train.batch = 256;
  cfg.train.iters_per_ipf = 1000;
  cfg.train.cache_size = 1024;
  cfg.seed = 7;
  TreeDsbEngine eng(cfg);
  eng.run_cycles(15, [&](IterationMetrics& m) {
    std::printf("  iteration %ld leaf %d loss %.4g (%.0f s)\n", m.iteration, m.target,
                m.edges.back().final_loss, seconds_since(t0));
    std::fflush(stdout);
  });

  std::map<NodeId, std::map<NodeId, SampleSet>> from;
  for (NodeId l : {1, 2, 3}) from[l] = eng.sample_tree(l, 10000, 700 + l);
  double worst_center = 0.0, worst_leaf = 0.0;
  for (NodeId a : {1, 2, 3}) {
    for (NodeId b : {1, 2, 3}) {
      if (a == b) continue;
      const Moments mb = empirical_moments(from[b][0]);
      worst_center = std::max(worst_center,
                              bw2_uvp(from[a][0], GaussianMeasure(mb.mean, mb.cov)));
      worst_leaf = std::max(worst_leaf, bw2_uvp(from[a][b], data_moments.at(b)));
    }
  }
  const double secs = seconds_since(t0);
  return {worst_center <= 10.0 && worst_leaf <= 10.0,
          fmt("worst pairwise center UVP %.2f%% (<= 10%%), worst reconstructed leaf UVP "
              "%.2f%% (<= 10%%), %.0f s",
              worst_center, worst_leaf, secs)};
}

Outcome criterion_8() {
  const auto t0 = Clock::now();
  std::vector<PropertyReport> all = tree_properties(1000, 808);
  for (auto& r : schedule_properties(1000, 809)) all.push_back(r);
  bool pass = true;
  std::string detail;
  for (const auto& r : all) {
    pass = pass && r.failures == 0 && r.cases >= 1000;
    detail += fmt("%s %d/%d; ", r.name.c_str(), r.cases - r.failures, r.cases);
    if (r.failures) detail += "first failure " + r.first_failure + "; ";
  }
  const double secs = seconds_since(t0);
  pass = pass && secs < 60.0;
  return {pass, detail + fmt("%.1f s (< 60 s)", secs)};
}

const std::map<int, std::pair<std::string, std::function<Outcome()>>> kCriteria = {
    {1, {"message passing matches the dense tensor", criterion_1}},
    {2, {"discrete mIPF convergence and Pythagorean identity", criterion_2}},
    {3, {"Wasserstein propagation identity", criterion_3}},
    {4, {"drift network gradients and zero-drift sampling", criterion_4}},
    {5, {"analytic backward drift recovery", criterion_5}},
    {6, {"Gaussian barycenter d=2", criterion_6}},
    {7, {"2-D toy barycenter consistency", criterion_7}},
    {8, {"tree and schedule property tests", criterion_8}},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> selected;
  app.add_option("--criterion", selected, "criterion number (repeatable)")
      ->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) {
    for (const auto& [id, c] : kCriteria) selected.push_back(id);
  }
  int failures = 0;
  for (int id : selected) {
    const auto& [title, fn] = kCriteria.at(id);
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s criterion %d (%s): %s\n", out.pass ? "PASS" : "FAIL", id, title.c_str(),
                out.detail.c_str());
    std::fflush(stdout);
    if (!out.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
