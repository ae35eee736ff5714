#include "property_checks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "treedsb/rng.hpp"
#include "treedsb/schedule.hpp"
#include "treedsb/tree.hpp"

using namespace treedsb;

namespace {

struct Checker {
  PropertyReport report;
  void check(bool ok, const std::string& what) {
    if (!ok && report.failures++ == 0) report.first_failure = what;
  }
};

// Random recursive tree with relabelled nodes, shuffled edges and
// log-uniform weights.
UndirectedTree random_tree(std::mt19937_64& rng, int max_nodes) {
  std::uniform_int_distribution<int> size(2, max_nodes);
  const int n = size(rng);
  std::vector<int> label(n);
  std::iota(label.begin(), label.end(), 0);
  std::shuffle(label.begin(), label.end(), rng);
  std::uniform_real_distribution<double> logw(std::log(0.1), std::log(10.0));
  std::vector<WeightedEdge> edges;
  for (int i = 1; i < n; ++i) {
    std::uniform_int_distribution<int> parent(0, i - 1);
    int a = label[i], b = label[parent(rng)];
    if (rng() & 1) std::swap(a, b);
    edges.push_back({a, b, std::exp(logw(rng))});
  }
  std::shuffle(edges.begin(), edges.end(), rng);
  return UndirectedTree::build(n, edges);
}

std::string case_tag(int c) {
  return "case " + std::to_string(c);
}

std::pair<int, int> undirected(const DirectedEdge& e) {
  return std::minmax(e.from, e.to);
}

TimeSchedule random_schedule(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> half(1, 60);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 2 * half(rng);
  const double horizon = std::exp(std::log(1e-3) + u(rng) * std::log(1e4));
  // gamma0 strictly below the even split so the ramp is well defined.
  const double gamma0 = horizon / n * std::pow(10.0, -1.0 - 4.0 * u(rng));
  return make_schedule(n, gamma0, horizon);
}

}  // namespace

std::vector<PropertyReport> tree_properties(int cases, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Checker count{{"directed edge count is n-1"}};
  Checker reroot{{"re-rooting flips exactly the path edges"}};
  Checker paths{{"two chained leaf paths use each edge at most twice"}};
  Checker chain{{"discretized chain resistances sum to 1/w"}};

  for (int c = 0; c < cases; ++c) {
    const UndirectedTree tree = random_tree(rng, 40);
    const int n = tree.node_count();
    std::uniform_int_distribution<int> node(0, n - 1);
    const NodeId r = node(rng);
    const NodeId r2 = node(rng);
    const DirectedTree dt = root_at(tree, r);

    ++count.report.cases;
    std::set<std::pair<int, int>> seen;
    bool ok = static_cast<int>(dt.edges().size()) == n - 1;
    for (const auto& e : dt.edges()) {
      ok = ok && tree.has_edge(e.from, e.to) && seen.insert(undirected(e)).second;
    }
    for (NodeId v = 0; v < n; ++v) ok = ok && (dt.parent(v).has_value() == (v != r));
    count.check(ok, case_tag(c));

    ++reroot.report.cases;
    const DirectedTree dt2 = root_at(tree, r2);
    std::set<std::pair<int, int>> on_path;
    if (r != r2) {
      for (const auto& e : leaf_path(tree, r, r2)) on_path.insert(undirected(e));
    }
    ok = true;
    for (const auto& e : dt.edges()) {
      const bool flipped = dt2.contains(e.reversed());
      const bool kept = dt2.contains(e);
      ok = ok && (flipped != kept) && (flipped == on_path.contains(undirected(e)));
    }
    reroot.check(ok, case_tag(c));

    ++paths.report.cases;
    const NodeId a = node(rng), b = node(rng), cc = node(rng);
    std::map<std::pair<int, int>, int> uses;
    ok = true;
    for (auto [s, t] : {std::pair{a, b}, std::pair{b, cc}}) {
      if (s == t) continue;
      const EdgePath p = leaf_path(tree, s, t);
      ok = ok && p.front().from == s && p.back().to == t;
      for (std::size_t j = 0; j < p.size(); ++j) {
        ok = ok && tree.has_edge(p[j].from, p[j].to);
        if (j) ok = ok && p[j - 1].to == p[j].from;
        ++uses[undirected(p[j])];
      }
    }
    for (const auto& [e, k] : uses) ok = ok && k <= 2;
    paths.check(ok, case_tag(c));

    ++chain.report.cases;
    const auto& edge = tree.edges()[rng() % tree.edges().size()];
    std::uniform_real_distribution<double> ueps(0.01, 2.0);
    const double eps = ueps(rng);
    const double horizon = horizon_time(eps, edge.weight);
    std::uniform_int_distribution<int> half(1, 40);
    const int steps = 2 * half(rng);
    const TimeSchedule s = make_schedule(steps, horizon / steps * 1e-3, horizon);
    double resistance = 0.0;
    for (double w : discretized_weights(s, eps)) resistance += 1.0 / w;
    double time_sum = 0.0;
    for (double g : s.gammas()) time_sum += g;
    chain.check(std::abs(resistance - 1.0 / edge.weight) <= 1e-12 / edge.weight &&
                    std::abs(time_sum - horizon) <= 1e-12 * horizon,
                case_tag(c));
  }
  return {count.report, reroot.report, paths.report, chain.report};
}

std::vector<PropertyReport> schedule_properties(int cases, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Checker sums{{"palindrome and sum to the horizon"}};
  Checker reversal{{"reversed grid uses the same step sizes"}};
  Checker determinism{{"trajectories are seeded per row"}};
  Checker brownian{{"zero drift terminal law is N(x0, T I)"}};
  double kurtosis_sum = 0.0;
  long kurtosis_n = 0;

  for (int c = 0; c < cases; ++c) {
    const TimeSchedule s = random_schedule(rng);
    const int n = s.steps();
    const auto& g = s.gammas();
    const double tol = 1e-12 * s.horizon();

    ++sums.report.cases;
    bool ok = static_cast<int>(g.size()) == n;
    double total = 0.0;
    for (int m = 1; m <= n; ++m) {
      ok = ok && s.gamma(m) == s.gamma(n + 1 - m) && s.gamma(m) >= s.gamma0();
      total += s.gamma(m);
    }
    ok = ok && std::abs(total - s.horizon()) <= tol &&
         std::abs(s.time(n) - s.horizon()) <= tol && s.time(0) == 0.0 &&
         std::abs(s.gamma(n / 2) - s.gamma_bar()) <= 1e-12 * s.gamma_bar();
    for (int m = 1; m <= n; ++m) ok = ok && s.time(m) > s.time(m - 1);
    sums.check(ok, case_tag(c));

    // Integrating a time-dependent drift over the reversed grid: the reverse
    // pass at step k uses gamma_{N-k}, identical to gamma_{k+1}.
    ++reversal.report.cases;
    ok = true;
    std::vector<double> rev(g.rbegin(), g.rend());
    ok = rev == g;
    const TimeSchedule again = make_schedule(n, s.gamma0(), s.horizon());
    ok = ok && again.gammas() == g;
    reversal.check(ok, case_tag(c));

    ++determinism.report.cases;
    std::uniform_int_distribution<int> rows_d(1, 12), dim_d(1, 4);
    const int rows = rows_d(rng), dim = dim_d(rng);
    SampleMatrix x0(rows, dim);
    std::normal_distribution<double> normal;
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < dim; ++j) x0(i, j) = normal(rng);
    }
    const std::uint64_t sim_seed = rng();
    const double slope = normal(rng);
    BatchDrift drift = [slope](int, double t, const SampleMatrix& x, SampleMatrix& out) {
      out = (-slope * (1.0 + t)) * x;
    };
    const TrajectoryBatch full = em_forward(drift, s, SampleSet(x0), sim_seed);
    const TrajectoryBatch rerun = em_forward(drift, s, SampleSet(x0), sim_seed);
    ok = true;
    Eigen::RowVectorXd z(dim);
    for (int i = 0; i < rows; ++i) {
      // Row i simulated alone from its own substream.
      Eigen::RowVectorXd x = x0.row(i);
      for (int m = 0; m < n; ++m) {
        fill_step_noise(sim_seed, static_cast<std::uint64_t>(i), m + 1, z);
        const double gm = s.gamma(m + 1);
        const Eigen::RowVectorXd f = (-slope * (1.0 + s.time(m))) * x;
        x += gm * f;
        x += std::sqrt(gm) * z;
        ok = ok && (x.array() == full.states[m + 1].row(i).array()).all();
      }
    }
    for (int m = 0; m <= n; ++m) ok = ok && full.states[m] == rerun.states[m];
    determinism.check(ok, case_tag(c));

    // 400 Brownian paths from a random point: coordinate variances within
    // five standard errors of T and mean within five standard errors of x0.
    ++brownian.report.cases;
    const int paths = 400;
    Eigen::RowVectorXd start(dim);
    for (int j = 0; j < dim; ++j) start(j) = normal(rng);
    SampleMatrix init = start.replicate(paths, 1);
    const TrajectoryBatch b = brownian_forward(s, SampleSet(init), rng());
    const SampleMatrix& xt = b.states.back();
    ok = true;
    const double t = s.horizon();
    for (int j = 0; j < dim; ++j) {
      const Eigen::VectorXd col = xt.col(j).array() - start(j);
      const double mean = col.mean();
      const double var = col.squaredNorm() / paths;
      ok = ok && std::abs(mean) <= 5.0 * std::sqrt(t / paths);
      ok = ok && std::abs(var - t) <= 5.0 * t * std::sqrt(2.0 / paths);
      kurtosis_sum += (col.array() / std::sqrt(t)).pow(4).sum();
      kurtosis_n += paths;
    }
    brownian.check(ok, case_tag(c));
  }
  // Normality smoke check on the pooled standardized increments.
  const double kurt = kurtosis_sum / static_cast<double>(kurtosis_n);
  brownian.check(std::abs(kurt - 3.0) < 0.1,
                 "pooled kurtosis " + std::to_string(kurt));
  return {sums.report, reversal.report, determinism.report, brownian.report};
}
