#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "treedsb/measures.hpp"
#include "treedsb/schedule.hpp"

namespace treedsb {

inline constexpr int kTimeEmbedDim = 32;

// Sinusoidal features: 16 sines then 16 cosines of t at frequencies
// exp(-i ln(10000) / 15), i = 0..15.
Eigen::Matrix<double, kTimeEmbedDim, 1> pos_encode(double t);

enum class Activation { Silu, Tanh, LeakyRelu };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a);

struct LayerShape {
  std::string name;
  int out = 0;
  int in = 0;
  Eigen::Index offset = 0;  // weights (out x in, column-major) then bias
};

// Inputs for one batched evaluation. Each column of `x` is one sample; its
// time is times[time_index[col]]. Sharing a time between columns lets the
// time branch run once per distinct time.
struct TimeBatch {
  std::vector<double> times;
  std::vector<int> time_index;
};

// Drift network: block2(concat(block1a(x), block1b(pos_encode(t)))).
//   block1a: d -> 128 -> h
//   block1b: 32 -> 128 -> h
//   block2:  2h -> h -> max(128, d) -> d
// with h = max(256, 2d). Parameters live in one flat vector.
template <typename Scalar>
class DriftNet {
 public:
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  struct Cache {
    Mat x;
    Mat a0, z0;          // block1a hidden
    Mat pe, a2, z2, e2;  // time branch, one column per distinct time
    Mat c;               // concat input to block2
    Mat a4, z4, a5, z5;  // block2 hidden
    std::vector<int> time_index;
  };

  DriftNet() = default;
  // Hidden layers get U(-1/sqrt(fan_in), 1/sqrt(fan_in)); the final layer
  // starts at exactly zero.
  DriftNet(int dim, Activation act, std::uint64_t seed);

  int dim() const {
    return dim_;
  }
  int hidden() const {
    return hidden_;
  }
  Activation activation() const {
    return act_;
  }
  const std::vector<LayerShape>& layers() const {
    return layers_;
  }
  Eigen::Index param_count() const {
    return params_.size();
  }
  const Vec& params() const {
    return params_;
  }
  Vec& params() {
    return params_;
  }

  // True when the output layer is identically zero, so the drift is zero.
  bool output_is_zero() const;

  // x: dim x B. Writes out (dim x B). Fills `cache` when given.
  void forward(const TimeBatch& tb, const Mat& x, Mat& out,
               Cache* cache = nullptr) const;
  // Single shared time for all columns.
  void forward(double t, const Mat& x, Mat& out) const;

  // Adds d(loss)/d(params) to grad given d(loss)/d(out).
  void backward(const Cache& cache, const Mat& dout, Vec& grad) const;

  // Converts parameter storage to another scalar type.
  template <typename Other>
  DriftNet<Other> cast() const {
    DriftNet<Other> o;
    o.dim_ = dim_;
    o.hidden_ = hidden_;
    o.act_ = act_;
    o.layers_ = layers_;
    o.params_ = params_.template cast<Other>();
    return o;
  }

  // Rebuilds the layer table for a given dim and fills parameters from a
  // flat vector; throws ShapeMismatch when the size is wrong.
  static DriftNet from_params(int dim, Activation act, const Vec& params);

 private:
  template <typename>
  friend class DriftNet;

  void build_layers();

  int dim_ = 0;
  int hidden_ = 0;
  Activation act_ = Activation::Silu;
  std::vector<LayerShape> layers_;
  Vec params_;
};

extern template class DriftNet<float>;
extern template class DriftNet<double>;

// Convenience single-sample evaluation.
template <typename Scalar>
Eigen::VectorXd net_forward(const DriftNet<Scalar>& net, double t,
                            const Eigen::VectorXd& x);

// F_m(x) = x + gamma_{m+1} f(t_m, x) for 0 <= m <= N-1.
template <typename Scalar>
Eigen::VectorXd mean_fn(const DriftNet<Scalar>& net, const TimeSchedule& sched,
                        int m, const Eigen::VectorXd& x);

// Batched F_m applied row-wise, one step index per row.
using BatchMeanFn = std::function<SampleMatrix(const std::vector<int>& steps,
                                               const SampleMatrix& x)>;

BatchMeanFn identity_mean_fn();
template <typename Scalar>
BatchMeanFn network_mean_fn(const DriftNet<Scalar>& net,
                            const TimeSchedule& sched);

// Consecutive pairs (X_m, X_{m+1}) drawn from forward trajectories.
struct MeanMatchBatch {
  SampleMatrix x_prev;     // b x d
  SampleMatrix x_next;     // b x d
  std::vector<int> steps;  // m per row, 0 <= m <= N-1
};

// Regression problem seen by the reverse network: rows of `x` at reverse
// step N-m-1 should satisfy gamma * f(t, x) = delta.
struct RegressionBatch {
  SampleMatrix x;
  SampleMatrix delta;
  std::vector<double> gamma;  // per row
  TimeBatch time;
};

// Builds the regression problem: target = X_{m+1} + prev(X_m) - prev(X_{m+1}),
// delta = target - X_{m+1}, evaluated at reverse index N-m-1.
RegressionBatch make_regression_batch(const BatchMeanFn& prev_mean,
                                      const TimeSchedule& sched,
                                      const MeanMatchBatch& batch);

// Mean over rows of |F_new(X_{m+1}) - target|^2.
template <typename Scalar>
double mean_match_loss(const DriftNet<Scalar>& net, const RegressionBatch& rb);
template <typename Scalar>
double mean_match_loss(const DriftNet<Scalar>& net, const BatchMeanFn& prev_mean,
                       const TimeSchedule& sched, const MeanMatchBatch& batch);

// Loss and its exact gradient with respect to every parameter.
template <typename Scalar>
double loss_and_grad(const DriftNet<Scalar>& net, const RegressionBatch& rb,
                     typename DriftNet<Scalar>::Vec& grad);
template <typename Scalar>
typename DriftNet<Scalar>::Vec backprop_grads(const DriftNet<Scalar>& net,
                                              const BatchMeanFn& prev_mean,
                                              const TimeSchedule& sched,
                                              const MeanMatchBatch& batch);

template <typename Scalar>
struct AdamState {
  typename DriftNet<Scalar>::Vec m;
  typename DriftNet<Scalar>::Vec v;
  long step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(Eigen::Index n, double lr) {
    AdamState s;
    s.m = DriftNet<Scalar>::Vec::Zero(n);
    s.v = DriftNet<Scalar>::Vec::Zero(n);
    s.lr = lr;
    return s;
  }
};

// Bias-corrected Adam update in place.
template <typename Scalar>
void adam_step(typename DriftNet<Scalar>::Vec& params,
               const typename DriftNet<Scalar>::Vec& grads,
               AdamState<Scalar>& state);

}  // namespace treedsb
