#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "doctest.h"
#include "treedsb/drift_net.hpp"
#include "treedsb/error.hpp"

using namespace treedsb;

namespace {

using NetD = DriftNet<double>;

// Index of a parameter inside the flat vector.
Eigen::Index weight_at(const NetD& net, int layer, int row, int col) {
  const auto& l = net.layers()[layer];
  return l.offset + static_cast<Eigen::Index>(col) * l.out + row;
}
Eigen::Index bias_at(const NetD& net, int layer, int row) {
  const auto& l = net.layers()[layer];
  return l.offset + static_cast<Eigen::Index>(l.out) * l.in + row;
}

NetD constant_output_net(int dim, const Eigen::VectorXd& c) {
  NetD net(dim, Activation::Silu, 1);
  for (int k = 0; k < dim; ++k) net.params()(bias_at(net, 6, k)) = c(k);
  return net;
}

MeanMatchBatch random_batch(int b, int d, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> step(0, n - 1);
  MeanMatchBatch mb;
  mb.x_prev.resize(b, d);
  mb.x_next.resize(b, d);
  for (int i = 0; i < b; ++i) {
    for (int k = 0; k < d; ++k) {
      mb.x_prev(i, k) = normal(rng);
      mb.x_next(i, k) = mb.x_prev(i, k) + 0.3 * normal(rng);
    }
    mb.steps.push_back(step(rng));
  }
  return mb;
}

}  // namespace

TEST_CASE("positional encoding") {
  auto e0 = pos_encode(0.0);
  CHECK(e0.size() == 32);
  CHECK(e0.head(16).isZero());
  CHECK(e0.tail(16).isOnes());

  // Distinct encodings over a fine grid of [0, T].
  const double t_max = 0.15;
  std::vector<Eigen::Matrix<double, 32, 1>> enc;
  for (int i = 0; i <= 1000; ++i) enc.push_back(pos_encode(t_max * i / 1000));
  for (std::size_t i = 0; i < enc.size(); ++i) {
    for (std::size_t j = i + 1; j < enc.size(); ++j) {
      CHECK((enc[i] - enc[j]).norm() > 0.0);
    }
  }
}

TEST_CASE("network shapes and zero initialization") {
  NetD net(2, Activation::Silu, 5);
  CHECK(net.hidden() == 256);
  const auto& l = net.layers();
  REQUIRE(l.size() == 7);
  CHECK((l[0].out == 128 && l[0].in == 2));
  CHECK((l[1].out == 256 && l[1].in == 128));
  CHECK((l[2].out == 128 && l[2].in == 32));
  CHECK((l[3].out == 256 && l[3].in == 128));
  CHECK((l[4].out == 256 && l[4].in == 512));
  CHECK((l[5].out == 128 && l[5].in == 256));
  CHECK((l[6].out == 2 && l[6].in == 128));
  CHECK(NetD(200, Activation::Silu, 1).hidden() == 400);
  CHECK(NetD(200, Activation::Silu, 1).layers()[5].out == 200);

  CHECK(net.output_is_zero());
  for (double t : {0.0, 0.07, 0.15}) {
    auto f = net_forward(net, t, Eigen::Vector2d(0.3, -1.7));
    CHECK(f.isZero());
  }
  auto sched = make_schedule(50, 1e-5, 0.15);
  Eigen::Vector2d x(1.0, 2.0);
  for (int m : {0, 17, 49}) CHECK(mean_fn(net, sched, m, x) == x);
}

TEST_CASE("forward is deterministic") {
  NetD net(3, Activation::Tanh, 8);
  net.params()(bias_at(net, 6, 1)) = 0.5;
  net.params()(weight_at(net, 6, 0, 3)) = -0.25;
  Eigen::Vector3d x(0.1, 0.2, 0.3);
  auto a = net_forward(net, 0.05, x);
  auto b = net_forward(net, 0.05, x);
  CHECK(a == b);
  NetD net2(3, Activation::Tanh, 8);
  CHECK(net2.params().head(1000) == net.params().head(1000));
}

TEST_CASE("mean_fn hand-computed value") {
  // Only block2.1's first bias and one output weight/bias are nonzero after
  // zeroing every hidden layer, so the drift is 2*silu(1) + 0.1 in coordinate
  // 0 regardless of (t, x).
  NetD net(1, Activation::Silu, 3);
  net.params().setZero();
  net.params()(bias_at(net, 5, 0)) = 1.0;
  net.params()(weight_at(net, 6, 0, 0)) = 2.0;
  net.params()(bias_at(net, 6, 0)) = 0.1;
  const double silu1 = 1.0 / (1.0 + std::exp(-1.0));
  const double drift = 2.0 * silu1 + 0.1;
  CHECK(drift == doctest::Approx(1.5621171573).epsilon(1e-9));

  auto sched = make_schedule(4, 1e-3, 1.0);
  Eigen::VectorXd x(1);
  x << 0.4;
  for (int m = 0; m < 4; ++m) {
    auto f = mean_fn(net, sched, m, x);
    CHECK(f(0) == doctest::Approx(0.4 + sched.gamma(m + 1) * drift)
                      .epsilon(1e-14));
  }
  // Doubling gamma doubles the displacement.
  auto s1 = make_schedule(2, 1e-3, 0.2);
  auto s2 = make_schedule(2, 1e-3, 0.4);
  const double d1 = mean_fn(net, s1, 0, x)(0) - x(0);
  const double d2 = mean_fn(net, s2, 0, x)(0) - x(0);
  CHECK(d2 == doctest::Approx(2.0 * d1).epsilon(1e-12));

  bool threw = false;
  try {
    mean_fn(net, sched, 4, x);
  } catch (const Error& e) {
    threw = e.code() == ErrorCode::StepOutOfRange;
  }
  CHECK(threw);
}

TEST_CASE("mean-matching loss") {
  auto sched = make_schedule(2, 1e-3, 0.5);

  SUBCASE("identity previous mean regresses onto X_m") {
    NetD zero(2, Activation::Silu, 4);
    auto mb = random_batch(16, 2, 2, 9);
    auto rb = make_regression_batch(identity_mean_fn(), sched, mb);
    CHECK((rb.x + rb.delta - mb.x_prev).cwiseAbs().maxCoeff() < 1e-15);
    const double want = (mb.x_prev - mb.x_next).rowwise().squaredNorm().mean();
    CHECK(mean_match_loss(zero, identity_mean_fn(), sched, mb) ==
          doctest::Approx(want).epsilon(1e-14));
  }

  SUBCASE("hand-computed two-row batch") {
    BatchMeanFn twice = [](const std::vector<int>&, const SampleMatrix& x) {
      return SampleMatrix(2.0 * x);
    };
    MeanMatchBatch mb;
    mb.x_prev.resize(2, 1);
    mb.x_next.resize(2, 1);
    mb.x_prev << 1.0, -0.5;
    mb.x_next << 1.5, 0.25;
    mb.steps = {0, 1};
    Eigen::VectorXd c(1);
    c << 0.1;
    auto net = constant_output_net(1, c);
    // gamma = 0.25: residuals 0.025 + 1 and 0.025 + 1.5.
    const double want = (1.025 * 1.025 + 1.525 * 1.525) / 2.0;
    CHECK(mean_match_loss(net, twice, sched, mb) ==
          doctest::Approx(want).epsilon(1e-14));
  }

  SUBCASE("perfect fit has zero loss and zero gradient") {
    Eigen::VectorXd c(2);
    c << 0.4, -0.8;
    auto net = constant_output_net(2, c);
    MeanMatchBatch mb;
    mb.x_next.resize(3, 2);
    mb.x_next << 0.1, 0.2, -1.0, 0.5, 2.0, 2.0;
    mb.x_prev = mb.x_next.rowwise() + (0.25 * c).transpose();
    mb.steps = {0, 1, 1};
    CHECK(mean_match_loss(net, identity_mean_fn(), sched, mb) ==
          doctest::Approx(0.0));
    auto g = backprop_grads(net, identity_mean_fn(), sched, mb);
    CHECK(g.cwiseAbs().maxCoeff() < 1e-15);
  }

  SUBCASE("loss is invariant under row permutation") {
    NetD net(2, Activation::Silu, 12);
    net.params()(bias_at(net, 6, 0)) = 0.3;
    net.params()(weight_at(net, 6, 1, 7)) = 0.2;
    auto mb = random_batch(8, 2, 2, 31);
    MeanMatchBatch perm = mb;
    std::vector<int> order = {3, 7, 0, 5, 1, 6, 2, 4};
    for (int i = 0; i < 8; ++i) {
      perm.x_prev.row(i) = mb.x_prev.row(order[i]);
      perm.x_next.row(i) = mb.x_next.row(order[i]);
      perm.steps[i] = mb.steps[order[i]];
    }
    CHECK(mean_match_loss(net, identity_mean_fn(), sched, perm) ==
          doctest::Approx(mean_match_loss(net, identity_mean_fn(), sched, mb))
              .epsilon(1e-13));
  }
}

TEST_CASE("analytic gradients match central differences") {
  for (auto act : {Activation::Silu, Activation::Tanh}) {
    NetD net(2, act, 21);
    // Give the output layer random weights too.
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> unif(-0.1, 0.1);
    const auto& last = net.layers().back();
    for (Eigen::Index k = 0; k < last.out * last.in + last.out; ++k) {
      net.params()(last.offset + k) = unif(rng);
    }
    auto sched = make_schedule(4, 1e-3, 1.0);
    auto mb = random_batch(6, 2, 4, 77);
    auto prev = network_mean_fn(net, sched);
    auto rb = make_regression_batch(prev, sched, mb);
    NetD::Vec grad;
    loss_and_grad(net, rb, grad);
    auto again = backprop_grads(net, prev, sched, mb);
    CHECK(again == grad);

    std::uniform_int_distribution<Eigen::Index> pick(0, net.param_count() - 1);
    const double h = 1e-5;
    int good = 0;
    const int trials = 40;
    for (int i = 0; i < trials; ++i) {
      const Eigen::Index k = pick(rng);
      NetD plus = net;
      NetD minus = net;
      plus.params()(k) += h;
      minus.params()(k) -= h;
      const double fd =
          (mean_match_loss(plus, rb) - mean_match_loss(minus, rb)) / (2 * h);
      const double denom =
          std::max({std::abs(fd), std::abs(grad(k)), 1e-8});
      if (std::abs(fd - grad(k)) / denom <= 1e-4) ++good;
    }
    CHECK(good >= 38);
  }
}

TEST_CASE("Adam updates") {
  using Vec = NetD::Vec;
  Vec p = Vec::LinSpaced(5, -1.0, 1.0);
  const Vec p0 = p;

  auto s = AdamState<double>::zeros(5, 1e-3);
  adam_step(p, Vec::Zero(5).eval(), s);
  CHECK(p == p0);
  CHECK(s.step == 1);

  auto s2 = AdamState<double>::zeros(5, 1e-3);
  Vec g(5);
  g << 2.0, -3.0, 0.5, -0.1, 4.0;
  adam_step(p, g, s2);
  for (int k = 0; k < 5; ++k) {
    const double step = p0(k) - p(k);
    CHECK(step == doctest::Approx(1e-3 * (g(k) > 0 ? 1.0 : -1.0)).epsilon(1e-6));
  }

  Vec q = p0;
  auto s3 = AdamState<double>::zeros(5, 0.0);
  adam_step(q, g, s3);
  CHECK(q == p0);

  Vec wrong = Vec::Zero(4);
  bool threw = false;
  try {
    adam_step(q, wrong, s3);
  } catch (const Error& e) {
    threw = e.code() == ErrorCode::ShapeMismatch;
  }
  CHECK(threw);
}

TEST_CASE("float and double networks agree") {
  NetD net(2, Activation::Silu, 3);
  net.params()(bias_at(net, 6, 0)) = 0.2;
  net.params()(weight_at(net, 6, 1, 3)) = 0.7;
  auto f = net.cast<float>();
  Eigen::Vector2d x(0.3, -0.4);
  auto a = net_forward(net, 0.1, x);
  auto b = net_forward(f, 0.1, x);
  CHECK((a - b).norm() < 1e-5);
}
