#include "treedsb/measures.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "treedsb/error.hpp"

namespace treedsb {

SampleSet::SampleSet(SampleMatrix data) : data_(std::move(data)) {
  if (!data_.allFinite()) {
    throw Error(ErrorCode::NonFinite, "sample set has non-finite entries");
  }
}

GaussianMeasure::GaussianMeasure(Eigen::VectorXd mean, Eigen::MatrixXd cov)
    : mean_(std::move(mean)), cov_(std::move(cov)) {
  if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size() ||
      mean_.size() == 0) {
    throw Error(ErrorCode::DimensionMismatch,
                "mean has size " + std::to_string(mean_.size()) +
                    " but covariance is " + std::to_string(cov_.rows()) + "x" +
                    std::to_string(cov_.cols()));
  }
  if (!mean_.allFinite() || !cov_.allFinite()) {
    throw Error(ErrorCode::NotPositiveDefinite, "non-finite moments");
  }
  const double scale = std::max(1.0, cov_.cwiseAbs().maxCoeff());
  if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw Error(ErrorCode::NotPositiveDefinite, "covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov_,
                                                     Eigen::EigenvaluesOnly);
  if (!(eig.eigenvalues().minCoeff() > 0.0)) {
    throw Error(ErrorCode::NotPositiveDefinite,
                "covariance has eigenvalue " +
                    std::to_string(eig.eigenvalues().minCoeff()));
  }
}

GaussianMeasure GaussianMeasure::standard(Eigen::Index dim) {
  return GaussianMeasure(Eigen::VectorXd::Zero(dim),
                         Eigen::MatrixXd::Identity(dim, dim));
}

ToyKind parse_toy_kind(std::string_view name) {
  if (name == "swiss_roll") return ToyKind::SwissRoll;
  if (name == "circle") return ToyKind::Circle;
  if (name == "moons") return ToyKind::Moons;
  throw Error(ErrorCode::UnknownKind, "unknown dataset kind '" +
                                          std::string(name) + "'");
}

std::string_view toy_kind_name(ToyKind kind) {
  switch (kind) {
    case ToyKind::SwissRoll: return "swiss_roll";
    case ToyKind::Circle: return "circle";
    case ToyKind::Moons: return "moons";
  }
  return "unknown";
}

SampleSet gen_toy2d(ToyKind kind, Eigen::Index count, double noise,
                    std::uint64_t seed, const ToyShape& shape) {
  if (count < 0) {
    throw Error(ErrorCode::BadDimension, "negative sample count");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double pi = std::numbers::pi;

  SampleMatrix out(count, 2);
  for (Eigen::Index i = 0; i < count; ++i) {
    double x = 0.0;
    double y = 0.0;
    switch (kind) {
      case ToyKind::SwissRoll: {
        const double t = 1.5 * pi * (1.0 + 2.0 * unif(rng));
        x = shape.swiss_roll_scale * t * std::cos(t);
        y = shape.swiss_roll_scale * t * std::sin(t);
        break;
      }
      case ToyKind::Circle: {
        const double theta = 2.0 * pi * unif(rng);
        x = shape.circle_radius * std::cos(theta);
        y = shape.circle_radius * std::sin(theta);
        break;
      }
      case ToyKind::Moons: {
        const double t = pi * unif(rng);
        if (unif(rng) < 0.5) {
          x = std::cos(t);
          y = std::sin(t);
        } else {
          x = 1.0 - std::cos(t);
          y = 0.5 - std::sin(t);
        }
        // Centre the pair of arcs on the origin.
        x = shape.moons_scale * (x - 0.5);
        y = shape.moons_scale * (y - 0.25);
        break;
      }
    }
    if (noise > 0.0) {
      x += noise * normal(rng);
      y += noise * normal(rng);
    }
    out(i, 0) = x;
    out(i, 1) = y;
  }
  return SampleSet(std::move(out));
}

SampleSet gen_toy2d(std::string_view kind, Eigen::Index count, double noise,
                    std::uint64_t seed) {
  return gen_toy2d(parse_toy_kind(kind), count, noise, seed);
}

GaussianMeasure gen_random_spd(Eigen::Index dim, double cond_max, double scale,
                               std::uint64_t seed) {
  if (dim < 1) {
    throw Error(ErrorCode::BadDimension, "dimension must be >= 1");
  }
  if (!(cond_max >= 1.0) || !(scale > 0.0)) {
    throw Error(ErrorCode::BadDimension,
                "need cond_max >= 1 and scale > 0");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Eigen::MatrixXd g(dim, dim);
  for (Eigen::Index j = 0; j < dim; ++j) {
    for (Eigen::Index i = 0; i < dim; ++i) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  // Sign fix so Q is Haar distributed.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < dim; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }

  Eigen::VectorXd lambda(dim);
  const double log_lo = std::log(scale);
  const double log_hi = std::log(cond_max * scale);
  for (Eigen::Index i = 0; i < dim; ++i) {
    lambda(i) = std::exp(log_lo + (log_hi - log_lo) * unif(rng));
  }
  Eigen::MatrixXd cov = q * lambda.asDiagonal() * q.transpose();
  cov = 0.5 * (cov + cov.transpose()).eval();
  return GaussianMeasure(Eigen::VectorXd::Zero(dim), std::move(cov));
}

SampleSet sample_gaussian(const GaussianMeasure& g, Eigen::Index count,
                          std::uint64_t seed) {
  if (count < 0) {
    throw Error(ErrorCode::BadDimension, "negative sample count");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(g.cov());
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::NotPositiveDefinite,
                "Cholesky factorization failed");
  }
  const Eigen::MatrixXd l = llt.matrixL();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index d = g.dim();
  SampleMatrix out(count, d);
  Eigen::VectorXd z(d);
  for (Eigen::Index i = 0; i < count; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) z(k) = normal(rng);
    out.row(i) = (g.mean() + l * z).transpose();
  }
  return SampleSet(std::move(out));
}

GaussianMeasure reference_gaussian_design(
    std::span<const GaussianMeasure> leaf_measures, double alpha) {
  if (leaf_measures.empty()) {
    throw Error(ErrorCode::DimensionMismatch, "no leaf measures given");
  }
  if (!(alpha > 0.0)) {
    throw Error(ErrorCode::NonPositiveInput, "alpha must be positive");
  }
  const Eigen::Index d = leaf_measures.front().dim();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd inv_var_sum = Eigen::VectorXd::Zero(d);
  for (const auto& g : leaf_measures) {
    if (g.dim() != d) {
      throw Error(ErrorCode::DimensionMismatch,
                  "leaf measures have different dimensions");
    }
    mean += g.mean();
    for (Eigen::Index j = 0; j < d; ++j) {
      const double var = g.cov()(j, j);
      if (!(var > 0.0)) {
        throw Error(ErrorCode::ZeroVariance,
                    "coordinate " + std::to_string(j) + " has zero variance");
      }
      inv_var_sum(j) += 1.0 / var;
    }
  }
  const double k = static_cast<double>(leaf_measures.size());
  mean /= k;
  Eigen::VectorXd var(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    var(j) = alpha / (inv_var_sum(j) / k);
  }
  return GaussianMeasure(std::move(mean), var.asDiagonal().toDenseMatrix());
}

Moments empirical_moments(const SampleSet& s) {
  if (s.count() < 2) {
    throw Error(ErrorCode::TooFewSamples,
                "need at least 2 samples, got " + std::to_string(s.count()));
  }
  Moments m;
  m.mean = s.data().colwise().mean().transpose();
  const Eigen::MatrixXd centered = s.data().rowwise() - m.mean.transpose();
  m.cov = (centered.transpose() * centered) /
          static_cast<double>(s.count() - 1);
  return m;
}

}  // namespace treedsb
