#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "treedsb/config.hpp"
#include "treedsb/error.hpp"
#include "treedsb/gaussian.hpp"
#include "treedsb/harness.hpp"
#include "treedsb/io.hpp"
#include "treedsb/measures.hpp"

using namespace treedsb;
namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

bool is_config_error(ErrorCode c) {
  switch (c) {
    case ErrorCode::ParseError:
    case ErrorCode::UnknownKey:
    case ErrorCode::ConstraintViolation:
    case ErrorCode::ConfigInvalid:
    case ErrorCode::CycleDetected:
    case ErrorCode::Disconnected:
    case ErrorCode::NonPositiveWeight:
    case ErrorCode::DuplicateEdge:
    case ErrorCode::UnknownNode:
    case ErrorCode::UnknownKind:
      return true;
    default:
      return false;
  }
}

void print_error(const std::string& kind, const std::string& msg) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = msg;
  std::cerr << j.dump() << "\n";
}

ExperimentConfig load(const std::string& path) {
  ExperimentConfig cfg = parse_config(path);
  apply_env_overrides(cfg);
  return cfg;
}

Eigen::VectorXd parse_vector(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      v.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw Error(ErrorCode::SchemaError, "bad number '" + cell + "'");
    }
  }
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tree-structured Schrodinger bridges: training, oracles, evaluation"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a dataset to CSV");
  std::string gen_kind = "moons", gen_out, gen_config, gen_out_dir;
  long gen_count = 10000;
  double gen_noise = 0.05, gen_cond = 10.0, gen_scale = 0.3;
  int gen_dim = 2;
  std::uint64_t gen_seed = 0;
  gen->add_option("--kind", gen_kind, "gaussian|swiss_roll|circle|moons");
  gen->add_option("--count", gen_count);
  gen->add_option("--noise", gen_noise);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--dim", gen_dim, "gaussian only");
  gen->add_option("--cond", gen_cond, "gaussian only");
  gen->add_option("--scale", gen_scale, "gaussian only");
  gen->add_option("--out", gen_out, "output CSV");
  gen->add_option("--config", gen_config, "write every leaf dataset of a config")
      ->check(CLI::ExistingFile);
  gen->add_option("--out-dir", gen_out_dir, "directory for --config output");

  // run
  auto* run = app.add_subcommand("run", "Train on a config and write artifacts");
  std::string run_config, run_out;
  bool run_quiet = false;
  run->add_option("--config", run_config)->required()->check(CLI::ExistingFile);
  run->add_option("--out-dir", run_out)->required();
  run->add_flag("--quiet", run_quiet, "no progress on stderr");

  // oracle
  auto* oracle = app.add_subcommand("oracle", "Exact reference solutions");
  oracle->require_subcommand(1);
  auto* sink = oracle->add_subcommand("sinkhorn", "Discrete bridge on a 1-D grid");
  std::string sink_config;
  double sink_lo = -3.0, sink_hi = 3.0, sink_tol = 1e-10;
  int sink_grid = 10;
  sink->add_option("--config", sink_config)->required()->check(CLI::ExistingFile);
  sink->add_option("--lo", sink_lo);
  sink->add_option("--hi", sink_hi);
  sink->add_option("--grid", sink_grid);
  sink->add_option("--tol", sink_tol);
  auto* bary = oracle->add_subcommand("barycenter", "Gaussian barycenter fixed point");
  std::string bary_config;
  bary->add_option("--config", bary_config)->required()->check(CLI::ExistingFile);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate samples or a finished run");
  eval->require_subcommand(1);
  auto* uvp = eval->add_subcommand("uvp", "BW2-UVP of samples against a Gaussian");
  std::string uvp_samples, uvp_mean, uvp_cov, uvp_config, uvp_target_samples;
  uvp->add_option("--samples", uvp_samples)->required()->check(CLI::ExistingFile);
  uvp->add_option("--mean", uvp_mean, "comma-separated target mean");
  uvp->add_option("--cov", uvp_cov, "row-major target covariance");
  uvp->add_option("--barycenter-config", uvp_config,
                  "target is the barycenter of this config")
      ->check(CLI::ExistingFile);
  uvp->add_option("--target-samples", uvp_target_samples,
                  "target is the moment fit of this CSV")
      ->check(CLI::ExistingFile);
  auto* best = eval->add_subcommand("best", "Best uvp over metrics.jsonl");
  std::string best_metrics;
  best->add_option("--metrics", best_metrics)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("UsageError", e.what());
    return kUsageError;
  }

  try {
    if (*gen) {
      if (!gen_config.empty()) {
        if (gen_out_dir.empty()) throw CLI::ValidationError("--out-dir", "required with --config");
        const ExperimentConfig cfg = load(gen_config);
        const Experiment ex =
            build_experiment(cfg, fs::path(gen_config).parent_path());
        for (const auto& [id, data] : ex.engine.leaf_data) {
          const fs::path p = fs::path(gen_out_dir) / ("leaf_" + std::to_string(id) + ".csv");
          write_samples_csv(p, data);
          std::cout << p.string() << "\n";
        }
        return 0;
      }
      if (gen_out.empty()) throw CLI::ValidationError("--out", "required");
      SampleSet s = gen_kind == "gaussian"
                        ? sample_gaussian(gen_random_spd(gen_dim, gen_cond, gen_scale, gen_seed),
                                          gen_count, gen_seed + 1)
                        : gen_toy2d(parse_toy_kind(gen_kind), gen_count, gen_noise, gen_seed);
      write_samples_csv(gen_out, s);
      return 0;
    }
    if (*run) {
      const ExperimentConfig cfg = load(run_config);
      const RunManifest m = run_experiment(cfg, run_out, run_quiet ? nullptr : &std::cerr,
                                           fs::path(run_config).parent_path());
      std::cout << manifest_json(m).dump(2) << "\n";
      return 0;
    }
    if (*sink) {
      std::cout << oracle_sinkhorn(load(sink_config), sink_lo, sink_hi, sink_grid, sink_tol).dump(2)
                << "\n";
      return 0;
    }
    if (*bary) {
      std::cout << oracle_barycenter(load(bary_config)).dump(2) << "\n";
      return 0;
    }
    if (*uvp) {
      const SampleSet s = read_samples_csv(uvp_samples);
      std::optional<GaussianMeasure> target;
      if (!uvp_config.empty()) {
        const auto j = oracle_barycenter(load(uvp_config));
        const auto mean = j["mean"].get<std::vector<double>>();
        const auto rows = j["cov"].get<std::vector<std::vector<double>>>();
        Eigen::MatrixXd cov(rows.size(), rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          for (std::size_t k = 0; k < rows.size(); ++k) cov(i, k) = rows[i][k];
        }
        target.emplace(Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size()), cov);
      } else if (!uvp_target_samples.empty()) {
        const Moments mo = empirical_moments(read_samples_csv(uvp_target_samples));
        target.emplace(mo.mean, 0.5 * (mo.cov + mo.cov.transpose()));
      } else {
        if (uvp_mean.empty() || uvp_cov.empty()) {
          throw CLI::ValidationError("target",
                                     "give --mean and --cov, --barycenter-config or --target-samples");
        }
        const Eigen::VectorXd mean = parse_vector(uvp_mean);
        const Eigen::VectorXd flat = parse_vector(uvp_cov);
        if (flat.size() != mean.size() * mean.size()) {
          throw Error(ErrorCode::SchemaError, "--cov needs d*d entries");
        }
        Eigen::MatrixXd cov = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            flat.data(), mean.size(), mean.size());
        target.emplace(mean, cov);
      }
      std::cout << eval_uvp(s, *target).dump(2) << "\n";
      return 0;
    }
    if (*best) {
      std::cout << eval_best(best_metrics).dump(2) << "\n";
      return 0;
    }
  } catch (const CLI::Error& e) {
    print_error("UsageError", e.what());
    return kUsageError;
  } catch (const Error& e) {
    print_error(std::string(error_name(e.code())), e.what());
    return is_config_error(e.code()) ? kUsageError : kRuntimeError;
  } catch (const std::exception& e) {
    print_error("RuntimeError", e.what());
    return kRuntimeError;
  }
  return 0;
}
