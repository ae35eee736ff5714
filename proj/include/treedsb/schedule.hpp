#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "treedsb/measures.hpp"
#include "treedsb/tree.hpp"

namespace treedsb {

// Palindromic step sizes gamma_1..gamma_N summing to the horizon T.
class TimeSchedule {
 public:
  TimeSchedule() = default;

  int steps() const {
    return static_cast<int>(gammas_.size());
  }
  // gamma(m) for m = 1..N.
  double gamma(int m) const;
  // t_m = gamma_1 + ... + gamma_m for m = 0..N.
  double time(int m) const;
  double horizon() const {
    return horizon_;
  }
  double gamma0() const {
    return gamma0_;
  }
  double gamma_bar() const {
    return gamma_bar_;
  }
  const std::vector<double>& gammas() const {
    return gammas_;
  }
  const std::vector<double>& cumulative() const {
    return cumulative_;
  }

 private:
  friend TimeSchedule make_schedule(int n, double gamma0, double horizon);

  std::vector<double> gammas_;
  std::vector<double> cumulative_;
  double horizon_ = 0.0;
  double gamma0_ = 0.0;
  double gamma_bar_ = 0.0;
};

// gamma_k = gamma0 + (2k/N)(gamma_bar - gamma0) for k = 1..N/2, mirrored, with
// gamma_bar chosen so the steps sum to T.
TimeSchedule make_schedule(int n, double gamma0, double horizon);

// Closed form of gamma_bar: gamma0 + (T - N gamma0) / (N/2 + 1).
double solve_gamma_bar(int n, double gamma0, double horizon);

// Weights of the N sub-edges obtained by splitting an edge along its
// schedule: w_m = epsilon / (2 gamma_m). Their reciprocals sum to 1 / w.
std::vector<double> discretized_weights(const TimeSchedule& sched,
                                        double epsilon);

// Batched drift: fills `out` (rows x d) with f(t_m, x) for every row of x.
using BatchDrift = std::function<void(int m, double t, const SampleMatrix& x,
                                      SampleMatrix& out)>;

struct TrajectoryBatch {
  std::vector<SampleMatrix> states;  // N + 1 slices, each M x d
  TimeSchedule schedule;
  DirectedEdge edge;  // direction the trajectories were simulated along

  Eigen::Index count() const {
    return states.empty() ? 0 : states.front().rows();
  }
  Eigen::Index dim() const {
    return states.empty() ? 0 : states.front().cols();
  }
};

// X_{m+1} = X_m + gamma_{m+1} f(t_m, X_m) + sqrt(gamma_{m+1}) Z_{m+1}.
// Noise for trajectory i at step m comes from substream (seed, i, m), so the
// result does not depend on how the batch is split.
TrajectoryBatch em_forward(const BatchDrift& drift, const TimeSchedule& sched,
                           const SampleSet& init, std::uint64_t seed,
                           DirectedEdge edge = {});

TrajectoryBatch brownian_forward(const TimeSchedule& sched,
                                 const SampleSet& init, std::uint64_t seed,
                                 DirectedEdge edge = {});

SampleSet extract_marginal(const TrajectoryBatch& batch, int step);

// Standard normal noise row used for trajectory `traj` at step `m` (1-based
// step of the update producing X_m).
void fill_step_noise(std::uint64_t seed, std::uint64_t traj, int m,
                     Eigen::Ref<Eigen::RowVectorXd> out);

}  // namespace treedsb
