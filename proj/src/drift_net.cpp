#include "treedsb/drift_net.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "treedsb/error.hpp"

namespace treedsb {

Eigen::Matrix<double, kTimeEmbedDim, 1> pos_encode(double t) {
  constexpr int half = kTimeEmbedDim / 2;
  const double scale = std::log(10000.0) / (half - 1);
  Eigen::Matrix<double, kTimeEmbedDim, 1> out;
  for (int i = 0; i < half; ++i) {
    const double arg = t * std::exp(-scale * i);
    out(i) = std::sin(arg);
    out(half + i) = std::cos(arg);
  }
  return out;
}

Activation parse_activation(std::string_view name) {
  if (name == "silu") return Activation::Silu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "leaky_relu") return Activation::LeakyRelu;
  throw Error(ErrorCode::ConfigInvalid,
              "unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::Silu: return "silu";
    case Activation::Tanh: return "tanh";
    case Activation::LeakyRelu: return "leaky_relu";
  }
  return "unknown";
}

namespace {

constexpr int kWidth1 = 128;
constexpr double kLeakySlope = 0.01;

template <typename Mat>
void apply_act(Activation act, const Mat& a, Mat& z) {
  using S = typename Mat::Scalar;
  switch (act) {
    case Activation::Silu:
      z = (a.array() / (S(1) + (-a.array()).exp())).matrix();
      break;
    case Activation::Tanh:
      z = a.array().tanh().matrix();
      break;
    case Activation::LeakyRelu:
      z = a.array().max(S(kLeakySlope) * a.array()).matrix();
      break;
  }
}

// dz <- dz * act'(a), elementwise.
template <typename Mat>
void act_backward(Activation act, const Mat& a, Mat& dz) {
  using S = typename Mat::Scalar;
  switch (act) {
    case Activation::Silu: {
      auto s = (S(1) / (S(1) + (-a.array()).exp())).eval();
      dz.array() *= s * (S(1) + a.array() * (S(1) - s));
      break;
    }
    case Activation::Tanh: {
      auto th = a.array().tanh().eval();
      dz.array() *= S(1) - th * th;
      break;
    }
    case Activation::LeakyRelu:
      dz.array() *= (a.array() > S(0))
                        .select(Mat::Ones(a.rows(), a.cols()).array(),
                                Mat::Constant(a.rows(), a.cols(),
                                              S(kLeakySlope))
                                    .array());
      break;
  }
}

}  // namespace

template <typename Scalar>
void DriftNet<Scalar>::build_layers() {
  hidden_ = std::max(256, 2 * dim_);
  const int w3 = std::max(128, dim_);
  layers_ = {
      {"block1a.0", kWidth1, dim_, 0},
      {"block1a.1", hidden_, kWidth1, 0},
      {"block1b.0", kWidth1, kTimeEmbedDim, 0},
      {"block1b.1", hidden_, kWidth1, 0},
      {"block2.0", hidden_, 2 * hidden_, 0},
      {"block2.1", w3, hidden_, 0},
      {"block2.2", dim_, w3, 0},
  };
  Eigen::Index off = 0;
  for (auto& l : layers_) {
    l.offset = off;
    off += static_cast<Eigen::Index>(l.out) * l.in + l.out;
  }
  params_.setZero(off);
}

template <typename Scalar>
DriftNet<Scalar>::DriftNet(int dim, Activation act, std::uint64_t seed)
    : dim_(dim), act_(act) {
  if (dim < 1) {
    throw Error(ErrorCode::BadDimension, "network dimension must be >= 1");
  }
  build_layers();
  std::mt19937_64 rng(seed);
  for (std::size_t li = 0; li + 1 < layers_.size(); ++li) {
    const auto& l = layers_[li];
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    std::uniform_real_distribution<double> unif(-bound, bound);
    const Eigen::Index n = static_cast<Eigen::Index>(l.out) * l.in + l.out;
    for (Eigen::Index k = 0; k < n; ++k) {
      params_(l.offset + k) = static_cast<Scalar>(unif(rng));
    }
  }
}

template <typename Scalar>
DriftNet<Scalar> DriftNet<Scalar>::from_params(int dim, Activation act,
                                               const Vec& params) {
  DriftNet net;
  net.dim_ = dim;
  net.act_ = act;
  net.build_layers();
  if (params.size() != net.params_.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                "expected " + std::to_string(net.params_.size()) +
                    " parameters, got " + std::to_string(params.size()));
  }
  net.params_ = params;
  return net;
}

template <typename Scalar>
bool DriftNet<Scalar>::output_is_zero() const {
  const auto& l = layers_.back();
  const Eigen::Index n = static_cast<Eigen::Index>(l.out) * l.in + l.out;
  return (params_.segment(l.offset, n).array() == Scalar(0)).all();
}

namespace {

template <typename Scalar>
struct LayerView {
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> w;
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> b;
};

template <typename Scalar, typename V>
LayerView<Scalar> view(const V& params, const LayerShape& l) {
  const Scalar* p = params.data() + l.offset;
  return {{p, l.out, l.in}, {p + static_cast<Eigen::Index>(l.out) * l.in, l.out}};
}

template <typename Mat, typename L, typename In>
void affine(const L& layer, const In& in, Mat& out) {
  out.noalias() = layer.w * in;
  out.colwise() += layer.b;
}

}  // namespace

template <typename Scalar>
void DriftNet<Scalar>::forward(const TimeBatch& tb, const Mat& x, Mat& out,
                               Cache* cache) const {
  if (x.rows() != dim_) {
    throw Error(ErrorCode::ShapeMismatch,
                "input has " + std::to_string(x.rows()) + " rows, expected " +
                    std::to_string(dim_));
  }
  const Eigen::Index b = x.cols();
  if (static_cast<Eigen::Index>(tb.time_index.size()) != b) {
    throw Error(ErrorCode::ShapeMismatch, "time index length mismatch");
  }
  Cache local;
  Cache& c = cache != nullptr ? *cache : local;
  const auto l0 = view<Scalar>(params_, layers_[0]);
  const auto l1 = view<Scalar>(params_, layers_[1]);
  const auto l2 = view<Scalar>(params_, layers_[2]);
  const auto l3 = view<Scalar>(params_, layers_[3]);
  const auto l4 = view<Scalar>(params_, layers_[4]);
  const auto l5 = view<Scalar>(params_, layers_[5]);
  const auto l6 = view<Scalar>(params_, layers_[6]);

  c.x = x;
  c.time_index = tb.time_index;
  affine(l0, c.x, c.a0);
  apply_act(act_, c.a0, c.z0);

  const Eigen::Index k = static_cast<Eigen::Index>(tb.times.size());
  c.pe.resize(kTimeEmbedDim, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    c.pe.col(j) = pos_encode(tb.times[j]).template cast<Scalar>();
  }
  affine(l2, c.pe, c.a2);
  apply_act(act_, c.a2, c.z2);
  affine(l3, c.z2, c.e2);

  c.c.resize(2 * hidden_, b);
  c.c.topRows(hidden_).noalias() = l1.w * c.z0;
  c.c.topRows(hidden_).colwise() += l1.b;
  for (Eigen::Index j = 0; j < b; ++j) {
    const int ti = tb.time_index[j];
    if (ti < 0 || ti >= k) {
      throw Error(ErrorCode::StepOutOfRange, "time index out of range");
    }
    c.c.col(j).tail(hidden_) = c.e2.col(ti);
  }

  affine(l4, c.c, c.a4);
  apply_act(act_, c.a4, c.z4);
  affine(l5, c.z4, c.a5);
  apply_act(act_, c.a5, c.z5);
  affine(l6, c.z5, out);
}

template <typename Scalar>
void DriftNet<Scalar>::forward(double t, const Mat& x, Mat& out) const {
  TimeBatch tb;
  tb.times = {t};
  tb.time_index.assign(x.cols(), 0);
  forward(tb, x, out, nullptr);
}

template <typename Scalar>
void DriftNet<Scalar>::backward(const Cache& c, const Mat& dout,
                                Vec& grad) const {
  if (grad.size() != params_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient buffer has wrong size");
  }
  auto gw = [&](int li) {
    const auto& l = layers_[li];
    return Eigen::Map<Mat>(grad.data() + l.offset, l.out, l.in);
  };
  auto gb = [&](int li) {
    const auto& l = layers_[li];
    return Eigen::Map<Vec>(
        grad.data() + l.offset + static_cast<Eigen::Index>(l.out) * l.in,
        l.out);
  };
  const auto l1 = view<Scalar>(params_, layers_[1]);
  const auto l3 = view<Scalar>(params_, layers_[3]);
  const auto l4 = view<Scalar>(params_, layers_[4]);
  const auto l5 = view<Scalar>(params_, layers_[5]);
  const auto l6 = view<Scalar>(params_, layers_[6]);

  gw(6).noalias() += dout * c.z5.transpose();
  gb(6) += dout.rowwise().sum();
  Mat d5 = l6.w.transpose() * dout;
  act_backward(act_, c.a5, d5);
  gw(5).noalias() += d5 * c.z4.transpose();
  gb(5) += d5.rowwise().sum();
  Mat d4 = l5.w.transpose() * d5;
  act_backward(act_, c.a4, d4);
  gw(4).noalias() += d4 * c.c.transpose();
  gb(4) += d4.rowwise().sum();
  Mat dc = l4.w.transpose() * d4;

  // Spatial branch.
  const auto de1 = dc.topRows(hidden_);
  gw(1).noalias() += de1 * c.z0.transpose();
  gb(1) += de1.rowwise().sum();
  Mat d0 = l1.w.transpose() * de1;
  act_backward(act_, c.a0, d0);
  gw(0).noalias() += d0 * c.x.transpose();
  gb(0) += d0.rowwise().sum();

  // Time branch: fold columns sharing a time.
  Mat de2 = Mat::Zero(hidden_, c.e2.cols());
  for (Eigen::Index j = 0; j < dc.cols(); ++j) {
    de2.col(c.time_index[j]) += dc.col(j).tail(hidden_);
  }
  gw(3).noalias() += de2 * c.z2.transpose();
  gb(3) += de2.rowwise().sum();
  Mat d2 = l3.w.transpose() * de2;
  act_backward(act_, c.a2, d2);
  gw(2).noalias() += d2 * c.pe.transpose();
  gb(2) += d2.rowwise().sum();
}

template class DriftNet<float>;
template class DriftNet<double>;

template <typename Scalar>
Eigen::VectorXd net_forward(const DriftNet<Scalar>& net, double t,
                            const Eigen::VectorXd& x) {
  if (!x.allFinite() || !std::isfinite(t)) {
    throw Error(ErrorCode::NonFinite, "non-finite network input");
  }
  typename DriftNet<Scalar>::Mat in = x.cast<Scalar>();
  typename DriftNet<Scalar>::Mat out;
  net.forward(t, in, out);
  Eigen::VectorXd res = out.col(0).template cast<double>();
  if (!res.allFinite()) {
    throw Error(ErrorCode::NonFinite, "network output is not finite");
  }
  return res;
}

template <typename Scalar>
Eigen::VectorXd mean_fn(const DriftNet<Scalar>& net, const TimeSchedule& sched,
                        int m, const Eigen::VectorXd& x) {
  if (m < 0 || m >= sched.steps()) {
    throw Error(ErrorCode::StepOutOfRange,
                "mean index " + std::to_string(m) + " outside 0.." +
                    std::to_string(sched.steps() - 1));
  }
  return x + sched.gamma(m + 1) * net_forward(net, sched.time(m), x);
}

BatchMeanFn identity_mean_fn() {
  return [](const std::vector<int>&, const SampleMatrix& x) { return x; };
}

namespace {

TimeBatch schedule_time_batch(const TimeSchedule& sched,
                              const std::vector<int>& steps) {
  TimeBatch tb;
  tb.times.assign(sched.cumulative().begin(), sched.cumulative().end() - 1);
  tb.time_index = steps;
  return tb;
}

void check_steps(const TimeSchedule& sched, const std::vector<int>& steps) {
  for (int m : steps) {
    if (m < 0 || m >= sched.steps()) {
      throw Error(ErrorCode::StepOutOfRange,
                  "step " + std::to_string(m) + " outside 0.." +
                      std::to_string(sched.steps() - 1));
    }
  }
}

}  // namespace

template <typename Scalar>
BatchMeanFn network_mean_fn(const DriftNet<Scalar>& net,
                            const TimeSchedule& sched) {
  return [&net, sched](const std::vector<int>& steps, const SampleMatrix& x) {
    check_steps(sched, steps);
    if (static_cast<Eigen::Index>(steps.size()) != x.rows()) {
      throw Error(ErrorCode::ShapeMismatch, "one step index per row needed");
    }
    SampleMatrix out = x;
    if (net.output_is_zero()) return out;
    typename DriftNet<Scalar>::Mat in = x.transpose().template cast<Scalar>();
    typename DriftNet<Scalar>::Mat f;
    net.forward(schedule_time_batch(sched, steps), in, f);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      out.row(i) += sched.gamma(steps[i] + 1) *
                    f.col(i).transpose().template cast<double>();
    }
    return out;
  };
}

RegressionBatch make_regression_batch(const BatchMeanFn& prev_mean,
                                      const TimeSchedule& sched,
                                      const MeanMatchBatch& batch) {
  const Eigen::Index b = batch.x_prev.rows();
  if (b < 1 || batch.x_next.rows() != b ||
      batch.x_next.cols() != batch.x_prev.cols() ||
      static_cast<Eigen::Index>(batch.steps.size()) != b) {
    throw Error(ErrorCode::ShapeMismatch, "malformed mean-matching batch");
  }
  check_steps(sched, batch.steps);
  const int n = sched.steps();
  RegressionBatch rb;
  rb.x = batch.x_next;
  rb.delta = prev_mean(batch.steps, batch.x_prev) -
             prev_mean(batch.steps, batch.x_next);
  rb.gamma.resize(b);
  std::vector<int> rev(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const int m = batch.steps[i];
    rev[i] = n - m - 1;
    rb.gamma[i] = sched.gamma(rev[i] + 1);
  }
  rb.time = schedule_time_batch(sched, rev);
  return rb;
}

namespace {

template <typename Scalar>
double residual(const DriftNet<Scalar>& net, const RegressionBatch& rb,
                typename DriftNet<Scalar>::Mat& r,
                typename DriftNet<Scalar>::Cache* cache) {
  using Mat = typename DriftNet<Scalar>::Mat;
  const Eigen::Index b = rb.x.rows();
  Mat in = rb.x.transpose().template cast<Scalar>();
  Mat out;
  net.forward(rb.time, in, out, cache);
  r.resize(out.rows(), b);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    r.col(j) = static_cast<Scalar>(rb.gamma[j]) * out.col(j) -
               rb.delta.row(j).transpose().template cast<Scalar>();
    loss += r.col(j).template cast<double>().squaredNorm();
  }
  return loss / static_cast<double>(b);
}

}  // namespace

template <typename Scalar>
double mean_match_loss(const DriftNet<Scalar>& net, const RegressionBatch& rb) {
  typename DriftNet<Scalar>::Mat r;
  return residual(net, rb, r, nullptr);
}

template <typename Scalar>
double mean_match_loss(const DriftNet<Scalar>& net, const BatchMeanFn& prev_mean,
                       const TimeSchedule& sched, const MeanMatchBatch& batch) {
  return mean_match_loss(net, make_regression_batch(prev_mean, sched, batch));
}

template <typename Scalar>
double loss_and_grad(const DriftNet<Scalar>& net, const RegressionBatch& rb,
                     typename DriftNet<Scalar>::Vec& grad) {
  using Mat = typename DriftNet<Scalar>::Mat;
  typename DriftNet<Scalar>::Cache cache;
  Mat r;
  const double loss = residual(net, rb, r, &cache);
  if (!std::isfinite(loss)) {
    throw Error(ErrorCode::NonFinite, "mean-matching loss is not finite");
  }
  const Eigen::Index b = rb.x.rows();
  Mat dout(r.rows(), b);
  for (Eigen::Index j = 0; j < b; ++j) {
    dout.col(j) = static_cast<Scalar>(2.0 * rb.gamma[j] / b) * r.col(j);
  }
  grad.setZero(net.param_count());
  net.backward(cache, dout, grad);
  if (!grad.allFinite()) {
    throw Error(ErrorCode::NonFinite, "gradient is not finite");
  }
  return loss;
}

template <typename Scalar>
typename DriftNet<Scalar>::Vec backprop_grads(const DriftNet<Scalar>& net,
                                              const BatchMeanFn& prev_mean,
                                              const TimeSchedule& sched,
                                              const MeanMatchBatch& batch) {
  typename DriftNet<Scalar>::Vec grad;
  loss_and_grad(net, make_regression_batch(prev_mean, sched, batch), grad);
  return grad;
}

template <typename Scalar>
void adam_step(typename DriftNet<Scalar>::Vec& params,
               const typename DriftNet<Scalar>::Vec& grads,
               AdamState<Scalar>& s) {
  if (grads.size() != params.size() || s.m.size() != params.size() ||
      s.v.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "Adam shapes do not match");
  }
  ++s.step;
  const Scalar b1 = static_cast<Scalar>(s.beta1);
  const Scalar b2 = static_cast<Scalar>(s.beta2);
  s.m = b1 * s.m + (Scalar(1) - b1) * grads;
  s.v = b2 * s.v + (Scalar(1) - b2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  const Scalar lr = static_cast<Scalar>(s.lr);
  const Scalar eps = static_cast<Scalar>(s.eps);
  params.array() -=
      lr * (s.m.array() / static_cast<Scalar>(c1)) /
      ((s.v.array() / static_cast<Scalar>(c2)).sqrt() + eps);
}

#define TREEDSB_INSTANTIATE(S)                                                \
  template Eigen::VectorXd net_forward(const DriftNet<S>&, double,            \
                                       const Eigen::VectorXd&);               \
  template Eigen::VectorXd mean_fn(const DriftNet<S>&, const TimeSchedule&,   \
                                   int, const Eigen::VectorXd&);              \
  template BatchMeanFn network_mean_fn(const DriftNet<S>&,                    \
                                       const TimeSchedule&);                  \
  template double mean_match_loss(const DriftNet<S>&, const RegressionBatch&); \
  template double mean_match_loss(const DriftNet<S>&, const BatchMeanFn&,     \
                                  const TimeSchedule&, const MeanMatchBatch&); \
  template double loss_and_grad(const DriftNet<S>&, const RegressionBatch&,   \
                                DriftNet<S>::Vec&);                           \
  template DriftNet<S>::Vec backprop_grads(const DriftNet<S>&,                \
                                           const BatchMeanFn&,                \
                                           const TimeSchedule&,               \
                                           const MeanMatchBatch&);            \
  template void adam_step(DriftNet<S>::Vec&, const DriftNet<S>::Vec&,         \
                          AdamState<S>&);

TREEDSB_INSTANTIATE(float)
TREEDSB_INSTANTIATE(double)

#undef TREEDSB_INSTANTIATE

}  // namespace treedsb
