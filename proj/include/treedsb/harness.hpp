#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "treedsb/config.hpp"
#include "treedsb/engine.hpp"
#include "treedsb/measures.hpp"

namespace treedsb {

// A parsed config turned into concrete data.
struct Experiment {
  EngineConfig engine;
  // Generating Gaussian of each leaf of kind "gaussian".
  std::map<NodeId, GaussianMeasure> leaf_gaussians;
  // Fixed-point barycenter with weights proportional to the edge weights;
  // set for a star whose leaves are all Gaussian.
  std::optional<GaussianMeasure> barycenter;
};

// Relative csv paths resolve against `base_dir`.
Experiment build_experiment(const ExperimentConfig& cfg,
                            const std::filesystem::path& base_dir = ".");

struct IterationRecord {
  long iteration = 0;
  NodeId leaf = 0;
  double final_loss = 0.0;
  double wall_seconds = 0.0;
  std::optional<double> uvp;
};

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<IterationRecord> records;
  std::vector<std::string> artifacts;  // relative to out_dir
  bool complete = false;
  std::string error;
  std::optional<double> best_uvp;
};

// Trains, then writes config.cfg, metrics.jsonl, samples/, checkpoint/ and
// manifest.json into out_dir. On failure the manifest is written with
// complete = false before the error propagates. Progress lines go to `log`.
RunManifest run_experiment(const ExperimentConfig& cfg,
                           const std::filesystem::path& out_dir,
                           std::ostream* log = nullptr,
                           const std::filesystem::path& base_dir = ".");

nlohmann::ordered_json manifest_json(const RunManifest& m);

// Moment fit of samples against a Gaussian target.
nlohmann::ordered_json eval_uvp(const SampleSet& samples,
                                const GaussianMeasure& target);

// Minimum uvp over a metrics.jsonl file (SchemaError on malformed lines,
// ConstraintViolation when no record carries a uvp).
nlohmann::ordered_json eval_best(const std::filesystem::path& metrics_path);

// Fixed-point barycenter of the config's Gaussian star.
nlohmann::ordered_json oracle_barycenter(const ExperimentConfig& cfg);

// Discrete bridge on a uniform 1-D grid for a config with one-dimensional
// Gaussian leaves, discretized on the grid.
nlohmann::ordered_json oracle_sinkhorn(const ExperimentConfig& cfg, double lo,
                                       double hi, int grid, double tol);

}  // namespace treedsb
