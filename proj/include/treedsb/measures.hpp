#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace treedsb {

// Samples stored row-wise: count x dim. Row-major, so `data().transpose()`
// is a column-per-sample view with no copy.
using SampleMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class SampleSet {
 public:
  SampleSet() = default;
  SampleSet(Eigen::Index count, Eigen::Index dim) : data_(count, dim) {
    data_.setZero();
  }
  // Throws NonFinite if any entry is NaN or infinite.
  explicit SampleSet(SampleMatrix data);

  Eigen::Index count() const {
    return data_.rows();
  }
  Eigen::Index dim() const {
    return data_.cols();
  }
  const SampleMatrix& data() const {
    return data_;
  }
  SampleMatrix& mutable_data() {
    return data_;
  }
  auto row(Eigen::Index i) const {
    return data_.row(i);
  }

 private:
  SampleMatrix data_;
};

class GaussianMeasure {
 public:
  // Throws DimensionMismatch / NotPositiveDefinite on invalid input.
  GaussianMeasure(Eigen::VectorXd mean, Eigen::MatrixXd cov);

  static GaussianMeasure standard(Eigen::Index dim);

  Eigen::Index dim() const {
    return mean_.size();
  }
  const Eigen::VectorXd& mean() const {
    return mean_;
  }
  const Eigen::MatrixXd& cov() const {
    return cov_;
  }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
};

enum class ToyKind { SwissRoll, Circle, Moons };

// Parses "swiss_roll" | "circle" | "moons"; throws UnknownKind.
ToyKind parse_toy_kind(std::string_view name);
std::string_view toy_kind_name(ToyKind kind);

// Shape parameters of the 2-D toys. Defaults keep every dataset inside
// [-2, 2]^2 at moderate noise.
struct ToyShape {
  double circle_radius = 1.5;
  double swiss_roll_scale = 1.0 / 7.5;  // applied to the raw t*cos(t) roll
  double moons_scale = 1.0;
};

SampleSet gen_toy2d(ToyKind kind, Eigen::Index count, double noise,
                    std::uint64_t seed, const ToyShape& shape = {});
SampleSet gen_toy2d(std::string_view kind, Eigen::Index count, double noise,
                    std::uint64_t seed);

// Zero-mean Gaussian with cov = Q diag(lambda) Q^T, Q Haar-orthogonal and
// lambda log-uniform on [scale, cond_max * scale].
GaussianMeasure gen_random_spd(Eigen::Index dim, double cond_max, double scale,
                               std::uint64_t seed);

SampleSet sample_gaussian(const GaussianMeasure& g, Eigen::Index count,
                          std::uint64_t seed);

// Diagonal Gaussian whose mean averages the input means and whose variances
// are alpha times the coordinate-wise harmonic mean of the input variances.
GaussianMeasure reference_gaussian_design(
    std::span<const GaussianMeasure> leaf_measures, double alpha);

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased, divisor count - 1
};

Moments empirical_moments(const SampleSet& s);

}  // namespace treedsb
