#include "treedsb/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "treedsb/error.hpp"

namespace treedsb {

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  if (eig.info() != Eigen::Success) {
    throw Error(ErrorCode::NotPositiveDefinite, "eigendecomposition failed");
  }
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -1e-10 * scale) {
    throw Error(ErrorCode::NotPositiveDefinite,
                "matrix has eigenvalue " +
                    std::to_string(eig.eigenvalues().minCoeff()));
  }
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() *
         eig.eigenvectors().transpose();
}

double gaussian_w2sq(const Eigen::VectorXd& m1, const Eigen::MatrixXd& s1,
                     const Eigen::VectorXd& m2, const Eigen::MatrixXd& s2) {
  if (m1.size() != m2.size() || s1.rows() != m1.size() ||
      s2.rows() != m2.size()) {
    throw Error(ErrorCode::DimensionMismatch, "Gaussian dimensions differ");
  }
  const Eigen::MatrixXd r2 = sqrtm_psd(s2);
  const Eigen::MatrixXd cross = sqrtm_psd(r2 * s1 * r2);
  const double bures = (s1 + s2 - 2.0 * cross).trace();
  return (m1 - m2).squaredNorm() + std::max(0.0, bures);
}

double gaussian_w2sq(const GaussianMeasure& g1, const GaussianMeasure& g2) {
  return gaussian_w2sq(g1.mean(), g1.cov(), g2.mean(), g2.cov());
}

double bw2_uvp(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
               const GaussianMeasure& target) {
  const double w2 = gaussian_w2sq(mean, cov, target.mean(), target.cov());
  return 100.0 * 2.0 * w2 / target.cov().trace();
}

double bw2_uvp(const SampleSet& candidate, const GaussianMeasure& target) {
  const Moments m = empirical_moments(candidate);
  return bw2_uvp(m.mean, m.cov, target);
}

namespace {

struct FixedPointMap {
  Eigen::MatrixXd next;
  double residual;
};

FixedPointMap barycenter_map(const Eigen::MatrixXd& s,
                             std::span<const GaussianMeasure> gaussians,
                             std::span<const double> weights) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  const Eigen::VectorXd ev = eig.eigenvalues();
  if (!(ev.minCoeff() > 0.0)) {
    throw Error(ErrorCode::NotPositiveDefinite,
                "barycenter iterate lost positive definiteness");
  }
  const Eigen::MatrixXd& q = eig.eigenvectors();
  const Eigen::MatrixXd root = q * ev.cwiseSqrt().asDiagonal() * q.transpose();
  const Eigen::MatrixXd inv_root =
      q * ev.cwiseSqrt().cwiseInverse().asDiagonal() * q.transpose();
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(s.rows(), s.cols());
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    t += weights[i] * sqrtm_psd(root * gaussians[i].cov() * root);
  }
  FixedPointMap out;
  out.residual = (s - t).norm();
  out.next = inv_root * t * t * inv_root;
  out.next = 0.5 * (out.next + out.next.transpose()).eval();
  return out;
}

}  // namespace

BarycenterResult gaussian_barycenter_fixed_point(
    std::span<const GaussianMeasure> gaussians, std::span<const double> weights,
    double tol, int max_iter) {
  if (gaussians.empty() || gaussians.size() != weights.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "need one weight per Gaussian and at least one Gaussian");
  }
  const Eigen::Index d = gaussians.front().dim();
  double wsum = 0.0;
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    if (gaussians[i].dim() != d) {
      throw Error(ErrorCode::DimensionMismatch, "Gaussian dimensions differ");
    }
    if (!(weights[i] >= 0.0)) {
      throw Error(ErrorCode::NonPositiveInput, "negative barycenter weight");
    }
    wsum += weights[i];
  }
  if (std::abs(wsum - 1.0) > 1e-12) {
    throw Error(ErrorCode::NonPositiveInput, "weights must sum to 1");
  }

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    mean += weights[i] * gaussians[i].mean();
    s += weights[i] * gaussians[i].cov();
  }

  double damping = 1.0;
  double prev_residual = std::numeric_limits<double>::infinity();
  for (int it = 0; it <= max_iter; ++it) {
    FixedPointMap step = barycenter_map(s, gaussians, weights);
    if (step.residual <= tol) {
      return {GaussianMeasure(mean, s), it, step.residual};
    }
    if (step.residual > prev_residual) damping = 0.5;
    prev_residual = step.residual;
    s = (1.0 - damping) * s + damping * step.next;
  }
  throw Error(ErrorCode::NoConvergence,
              "barycenter fixed point did not reach residual " +
                  std::to_string(tol) + " in " + std::to_string(max_iter) +
                  " iterations (last " + std::to_string(prev_residual) + ")");
}

}  // namespace treedsb
