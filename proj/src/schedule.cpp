#include "treedsb/schedule.hpp"

#include <cmath>
#include <random>
#include <string>

#include "treedsb/error.hpp"
#include "treedsb/rng.hpp"

namespace treedsb {

double TimeSchedule::gamma(int m) const {
  if (m < 1 || m > steps()) {
    throw Error(ErrorCode::StepOutOfRange,
                "gamma index " + std::to_string(m) + " outside 1.." +
                    std::to_string(steps()));
  }
  return gammas_[m - 1];
}

double TimeSchedule::time(int m) const {
  if (m < 0 || m > steps()) {
    throw Error(ErrorCode::StepOutOfRange,
                "time index " + std::to_string(m) + " outside 0.." +
                    std::to_string(steps()));
  }
  return cumulative_[m];
}

double solve_gamma_bar(int n, double gamma0, double horizon) {
  return gamma0 + (horizon - n * gamma0) / (n / 2 + 1.0);
}

TimeSchedule make_schedule(int n, double gamma0, double horizon) {
  if (n < 2 || n % 2 != 0) {
    throw Error(ErrorCode::OddN,
                "step count must be even and >= 2, got " + std::to_string(n));
  }
  if (!(gamma0 > 0.0) || !(horizon > 0.0) || !std::isfinite(horizon)) {
    throw Error(ErrorCode::NonPositiveInput,
                "gamma0 and horizon must be positive");
  }
  if (horizon <= n * gamma0) {
    throw Error(ErrorCode::HorizonTooSmall,
                "horizon " + std::to_string(horizon) + " <= N * gamma0 = " +
                    std::to_string(n * gamma0));
  }
  TimeSchedule s;
  s.horizon_ = horizon;
  s.gamma0_ = gamma0;
  s.gamma_bar_ = solve_gamma_bar(n, gamma0, horizon);
  s.gammas_.assign(n, 0.0);
  const int half = n / 2;
  for (int k = 1; k <= half; ++k) {
    const double g = gamma0 + (2.0 * k / n) * (s.gamma_bar_ - gamma0);
    s.gammas_[k - 1] = g;
    s.gammas_[n - k] = g;
  }
  s.cumulative_.assign(n + 1, 0.0);
  for (int m = 1; m <= n; ++m) {
    s.cumulative_[m] = s.cumulative_[m - 1] + s.gammas_[m - 1];
  }
  return s;
}

std::vector<double> discretized_weights(const TimeSchedule& sched,
                                        double epsilon) {
  if (!(epsilon > 0.0)) {
    throw Error(ErrorCode::NonPositiveInput, "epsilon must be positive");
  }
  std::vector<double> w;
  w.reserve(sched.steps());
  for (double g : sched.gammas()) w.push_back(epsilon / (2.0 * g));
  return w;
}

void fill_step_noise(std::uint64_t seed, std::uint64_t traj, int m,
                     Eigen::Ref<Eigen::RowVectorXd> out) {
  CounterEngine eng(seed, traj, static_cast<std::uint64_t>(m));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index k = 0; k < out.size(); ++k) out(k) = normal(eng);
}

namespace {

TrajectoryBatch simulate(const BatchDrift* drift, const TimeSchedule& sched,
                         const SampleSet& init, std::uint64_t seed,
                         DirectedEdge edge) {
  const int n = sched.steps();
  if (n < 1) {
    throw Error(ErrorCode::StepOutOfRange, "empty schedule");
  }
  const Eigen::Index rows = init.count();
  const Eigen::Index d = init.dim();
  TrajectoryBatch batch;
  batch.schedule = sched;
  batch.edge = edge;
  batch.states.reserve(n + 1);
  batch.states.push_back(init.data());

  SampleMatrix f(rows, d);
  Eigen::RowVectorXd z(d);
  for (int m = 0; m < n; ++m) {
    const SampleMatrix& x = batch.states.back();
    const double g = sched.gamma(m + 1);
    const double sg = std::sqrt(g);
    SampleMatrix next = x;
    if (drift != nullptr) {
      f.resize(rows, d);
      (*drift)(m, sched.time(m), x, f);
      if (f.rows() != rows || f.cols() != d) {
        throw Error(ErrorCode::ShapeMismatch, "drift returned wrong shape");
      }
      if (!f.allFinite()) {
        throw Error(ErrorCode::NonFiniteDrift,
                    "drift is not finite at step " + std::to_string(m));
      }
      next += g * f;
    }
    for (Eigen::Index i = 0; i < rows; ++i) {
      fill_step_noise(seed, static_cast<std::uint64_t>(i), m + 1, z);
      next.row(i) += sg * z;
    }
    batch.states.push_back(std::move(next));
  }
  return batch;
}

}  // namespace

TrajectoryBatch em_forward(const BatchDrift& drift, const TimeSchedule& sched,
                           const SampleSet& init, std::uint64_t seed,
                           DirectedEdge edge) {
  return simulate(&drift, sched, init, seed, edge);
}

TrajectoryBatch brownian_forward(const TimeSchedule& sched,
                                 const SampleSet& init, std::uint64_t seed,
                                 DirectedEdge edge) {
  return simulate(nullptr, sched, init, seed, edge);
}

SampleSet extract_marginal(const TrajectoryBatch& batch, int step) {
  const int n = static_cast<int>(batch.states.size()) - 1;
  if (step < 0 || step > n) {
    throw Error(ErrorCode::StepOutOfRange,
                "step " + std::to_string(step) + " outside 0.." +
                    std::to_string(n));
  }
  return SampleSet(batch.states[step]);
}

}  // namespace treedsb
