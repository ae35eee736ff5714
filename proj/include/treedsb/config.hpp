#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "treedsb/engine.hpp"
#include "treedsb/tree.hpp"

namespace treedsb {

// How one leaf's dataset is produced.
struct LeafSpec {
  // gaussian | swiss_roll | circle | moons | csv
  std::string kind = "gaussian";
  Eigen::Index count = 10000;
  std::uint64_t seed = 0;
  // gaussian: random covariance with eigenvalues log-uniform on
  // [scale, cond * scale], optional mean (zero when empty).
  int dim = 2;
  double cond = 10.0;
  double scale = 0.3;
  std::uint64_t cov_seed = 0;
  std::vector<double> mean;
  // toys
  double noise = 0.05;
  // csv
  std::string path;

  friend bool operator==(const LeafSpec&, const LeafSpec&) = default;
};

struct ExperimentConfig {
  int nodes = 0;
  std::vector<WeightedEdge> edges;
  double epsilon = 0.1;
  // "leaf" or "internal"
  std::string root_mode = "leaf";
  NodeId root = -1;  // -1: last leaf (leaf mode) or star center (internal)
  double alpha = 1.0;
  std::map<NodeId, LeafSpec> leaves;
  TrainSettings train;
  int cycles = 10;
  std::uint64_t seed = 0;
  Eigen::Index root_samples = 10000;
  // Per-iteration evaluation: "none" or "barycenter" (star of Gaussian leaves).
  std::string eval_target = "none";
  Eigen::Index eval_count = 4000;
  // Points drawn per start leaf for the final sample CSVs.
  Eigen::Index sample_count = 2000;

  friend bool operator==(const ExperimentConfig&,
                         const ExperimentConfig&) = default;
};

// Flat "section.key = value" text, '#' starts a comment. Throws ParseError
// (with line and column), UnknownKey or ConstraintViolation. Missing tree
// edges describe a star: center 0, leaves 1..K with K the number of leaf
// sections and weight 1/K.
ExperimentConfig parse_config_text(std::string_view text);
ExperimentConfig parse_config(const std::filesystem::path& path);

// Every key written explicitly; parse_config_text(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

// FNV-1a over the serialized config, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

// TREEDSB_SEED, when set, replaces run.seed.
void apply_env_overrides(ExperimentConfig& cfg);

}  // namespace treedsb
