#pragma once

#include <span>

#include <Eigen/Dense>

#include "treedsb/measures.hpp"

namespace treedsb {

// Principal square root of a symmetric positive semi-definite matrix.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m);

// Squared 2-Wasserstein distance between Gaussians (Bures metric on the
// covariances plus squared mean gap).
double gaussian_w2sq(const Eigen::VectorXd& m1, const Eigen::MatrixXd& s1,
                     const Eigen::VectorXd& m2, const Eigen::MatrixXd& s2);
double gaussian_w2sq(const GaussianMeasure& g1, const GaussianMeasure& g2);

// 100 * 2 * W2^2(N(mean, cov), target) / tr(target.cov), in percent.
double bw2_uvp(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
               const GaussianMeasure& target);
// Fits Gaussian moments to the samples first.
double bw2_uvp(const SampleSet& candidate, const GaussianMeasure& target);

struct BarycenterResult {
  GaussianMeasure barycenter;
  int iterations = 0;
  double residual = 0.0;
};

// Fixed-point iteration for the 2-Wasserstein barycenter of Gaussians:
// S <- S^{-1/2} (sum_i w_i (S^{1/2} S_i S^{1/2})^{1/2})^2 S^{-1/2}.
// Residual is |S - sum_i w_i (S^{1/2} S_i S^{1/2})^{1/2}|_F.
BarycenterResult gaussian_barycenter_fixed_point(
    std::span<const GaussianMeasure> gaussians, std::span<const double> weights,
    double tol = 1e-10, int max_iter = 10000);

}  // namespace treedsb
