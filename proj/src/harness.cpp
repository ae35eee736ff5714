#include "treedsb/harness.hpp"

#include <chrono>
#include <fstream>
#include <ostream>

#include "treedsb/discrete_oracle.hpp"
#include "treedsb/error.hpp"
#include "treedsb/gaussian.hpp"
#include "treedsb/io.hpp"
#include "treedsb/rng.hpp"

namespace treedsb {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTagEval = 101;
constexpr std::uint64_t kTagSamples = 102;

nlohmann::ordered_json matrix_json(const Eigen::MatrixXd& m) {
  auto out = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) row[j] = m(i, j);
    out.push_back(row);
  }
  return out;
}

std::vector<double> vec(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

GaussianMeasure leaf_gaussian(const LeafSpec& s) {
  const GaussianMeasure shape = gen_random_spd(s.dim, s.cond, s.scale, s.cov_seed);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(s.dim);
  for (std::size_t j = 0; j < s.mean.size(); ++j) mean(j) = s.mean[j];
  return GaussianMeasure(mean, shape.cov());
}

}  // namespace

Experiment build_experiment(const ExperimentConfig& cfg, const fs::path& base_dir) {
  Experiment ex;
  EngineConfig& ec = ex.engine;
  ec.tree = UndirectedTree::build(cfg.nodes, cfg.edges);
  ec.epsilon = cfg.epsilon;
  ec.train = cfg.train;
  ec.seed = cfg.seed;
  ec.root_samples = cfg.root_samples;
  ec.root.node = cfg.root;

  std::vector<GaussianMeasure> fitted;
  for (const auto& [id, spec] : cfg.leaves) {
    if (spec.kind == "gaussian") {
      GaussianMeasure g = leaf_gaussian(spec);
      ec.leaf_data[id] = sample_gaussian(g, spec.count, spec.seed);
      ex.leaf_gaussians.emplace(id, g);
      fitted.push_back(g);
      continue;
    }
    if (spec.kind == "csv") {
      fs::path p = spec.path;
      if (p.is_relative()) p = base_dir / p;
      ec.leaf_data[id] = read_samples_csv(p);
    } else {
      ec.leaf_data[id] =
          gen_toy2d(parse_toy_kind(spec.kind), spec.count, spec.noise, spec.seed);
    }
    const Moments mo = empirical_moments(ec.leaf_data[id]);
    fitted.emplace_back(mo.mean, 0.5 * (mo.cov + mo.cov.transpose()));
  }
  if (cfg.root_mode == "internal") {
    ec.root.mu0 = reference_gaussian_design(fitted, cfg.alpha);
  }

  const auto center = ec.tree.star_center();
  if (center && ex.leaf_gaussians.size() == cfg.leaves.size()) {
    std::vector<GaussianMeasure> gs;
    std::vector<double> w;
    for (const auto& [id, g] : ex.leaf_gaussians) {
      gs.push_back(g);
      w.push_back(ec.tree.weight(*center, id));
    }
    double total = 0.0;
    for (double x : w) total += x;
    for (double& x : w) x /= total;
    ex.barycenter = gaussian_barycenter_fixed_point(gs, w).barycenter;
  }
  return ex;
}

nlohmann::ordered_json manifest_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["config_hash"] = m.config_hash;
  j["seed"] = m.seed;
  j["complete"] = m.complete;
  if (!m.error.empty()) j["error"] = m.error;
  if (m.best_uvp) j["best_uvp"] = *m.best_uvp;
  auto recs = nlohmann::ordered_json::array();
  for (const auto& r : m.records) {
    nlohmann::ordered_json x;
    x["iteration"] = r.iteration;
    x["leaf"] = r.leaf;
    x["final_loss"] = r.final_loss;
    x["wall_seconds"] = r.wall_seconds;
    x["uvp"] = r.uvp ? nlohmann::ordered_json(*r.uvp) : nlohmann::ordered_json();
    recs.push_back(std::move(x));
  }
  j["records"] = std::move(recs);
  j["artifacts"] = m.artifacts;
  return j;
}

RunManifest run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir,
                           std::ostream* log, const fs::path& base_dir) {
  fs::create_directories(out_dir);
  RunManifest man;
  man.config_hash = config_hash(cfg);
  man.seed = cfg.seed;
  auto write_manifest = [&] {
    std::ofstream out(out_dir / "manifest.json");
    if (!out) throw Error(ErrorCode::Io, "cannot write manifest in " + out_dir.string());
    out << manifest_json(man).dump(2) << "\n";
  };
  {
    std::ofstream out(out_dir / "config.cfg");
    if (!out) throw Error(ErrorCode::Io, "cannot write to " + out_dir.string());
    out << serialize_config(cfg);
    man.artifacts.push_back("config.cfg");
  }

  try {
    Experiment ex = build_experiment(cfg, base_dir);
    if (cfg.eval_target == "barycenter" && !ex.barycenter) {
      throw Error(ErrorCode::ConstraintViolation, "no barycenter oracle for this config");
    }
    TreeDsbEngine engine(ex.engine);
    std::ofstream metrics(out_dir / "metrics.jsonl");
    if (!metrics) throw Error(ErrorCode::Io, "cannot write metrics.jsonl");
    man.artifacts.push_back("metrics.jsonl");

    auto last = std::chrono::steady_clock::now();
    engine.run_cycles(cfg.cycles, [&](IterationMetrics& m) {
      if (cfg.eval_target == "barycenter") {
        const SampleSet c = engine.barycenter_samples(
            m.target, cfg.eval_count,
            substream_key(cfg.seed, kTagEval, static_cast<std::uint64_t>(m.iteration)));
        m.uvp = bw2_uvp(c, *ex.barycenter);
      }
      metrics << metrics_record(m).dump() << "\n";
      metrics.flush();
      const auto now = std::chrono::steady_clock::now();
      IterationRecord r;
      r.iteration = m.iteration;
      r.leaf = m.target;
      r.final_loss = m.edges.empty() ? 0.0 : m.edges.back().final_loss;
      r.wall_seconds = std::chrono::duration<double>(now - last).count();
      r.uvp = m.uvp;
      last = now;
      if (m.uvp && (!man.best_uvp || *m.uvp < *man.best_uvp)) man.best_uvp = m.uvp;
      man.records.push_back(r);
      if (log) {
        *log << "iteration " << r.iteration << " leaf " << r.leaf << " loss "
             << r.final_loss;
        if (r.uvp) *log << " uvp " << *r.uvp;
        *log << " (" << r.wall_seconds << " s)" << std::endl;
      }
    });

    for (NodeId leaf : engine.config().tree.leaves()) {
      const auto samples = engine.sample_tree(
          leaf, cfg.sample_count,
          substream_key(cfg.seed, kTagSamples, static_cast<std::uint64_t>(leaf)));
      for (const auto& [v, s] : samples) {
        const std::string rel = "samples/node_" + std::to_string(v) + "_from_" +
                                std::to_string(leaf) + ".csv";
        write_samples_csv(out_dir / rel, s);
        man.artifacts.push_back(rel);
      }
    }
    write_checkpoint(out_dir / "checkpoint", engine);
    man.artifacts.push_back("checkpoint/manifest.json");
    man.complete = true;
  } catch (const std::exception& err) {
    man.error = err.what();
    write_manifest();
    throw;
  }
  write_manifest();
  return man;
}

nlohmann::ordered_json eval_uvp(const SampleSet& samples,
                                const GaussianMeasure& target) {
  if (samples.dim() != target.dim()) {
    throw Error(ErrorCode::SchemaError,
                "samples have dimension " + std::to_string(samples.dim()) +
                    ", target " + std::to_string(target.dim()));
  }
  const Moments mo = empirical_moments(samples);
  nlohmann::ordered_json j;
  j["uvp_percent"] = bw2_uvp(mo.mean, mo.cov, target);
  j["count"] = samples.count();
  j["mean"] = vec(mo.mean);
  j["cov"] = matrix_json(mo.cov);
  j["target_mean"] = vec(target.mean());
  j["target_cov"] = matrix_json(target.cov());
  return j;
}

nlohmann::ordered_json eval_best(const fs::path& metrics_path) {
  std::ifstream in(metrics_path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + metrics_path.string());
  std::string line;
  long line_no = 0;
  std::optional<double> best;
  long best_iter = -1;
  int best_leaf = -1;
  long records = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ++records;
      const auto& u = j.at("uvp");
      if (u.is_null()) continue;
      const double v = u.get<double>();
      if (!best || v < *best) {
        best = v;
        best_iter = j.at("iteration").get<long>();
        best_leaf = j.at("leaf").get<int>();
      }
    } catch (const nlohmann::json::exception& err) {
      throw Error(ErrorCode::SchemaError, metrics_path.string() + " line " +
                                              std::to_string(line_no) + ": " +
                                              err.what());
    }
  }
  if (!best) {
    throw Error(ErrorCode::ConstraintViolation, "no record carries a uvp");
  }
  nlohmann::ordered_json j;
  j["best_uvp"] = *best;
  j["iteration"] = best_iter;
  j["leaf"] = best_leaf;
  j["records"] = records;
  return j;
}

nlohmann::ordered_json oracle_barycenter(const ExperimentConfig& cfg) {
  const UndirectedTree tree = UndirectedTree::build(cfg.nodes, cfg.edges);
  const auto center = tree.star_center();
  if (!center) throw Error(ErrorCode::NotStarTree, "tree has no central node");
  std::vector<GaussianMeasure> gs;
  std::vector<double> w;
  for (const auto& [id, spec] : cfg.leaves) {
    if (spec.kind != "gaussian") {
      throw Error(ErrorCode::ConstraintViolation,
                  "leaf " + std::to_string(id) + " is not Gaussian");
    }
    gs.push_back(leaf_gaussian(spec));
    w.push_back(tree.weight(*center, id));
  }
  double total = 0.0;
  for (double x : w) total += x;
  for (double& x : w) x /= total;
  const BarycenterResult r = gaussian_barycenter_fixed_point(gs, w);
  nlohmann::ordered_json j;
  j["mean"] = vec(r.barycenter.mean());
  j["cov"] = matrix_json(r.barycenter.cov());
  j["weights"] = w;
  j["iterations"] = r.iterations;
  j["residual"] = r.residual;
  return j;
}

nlohmann::ordered_json oracle_sinkhorn(const ExperimentConfig& cfg, double lo,
                                       double hi, int grid, double tol) {
  const UndirectedTree tree = UndirectedTree::build(cfg.nodes, cfg.edges);
  const Eigen::MatrixXd points = uniform_grid(lo, hi, grid);
  LeafMarginals mu;
  std::vector<GaussianMeasure> gs;
  for (const auto& [id, spec] : cfg.leaves) {
    if (spec.kind != "gaussian" || spec.dim != 1) {
      throw Error(ErrorCode::ConstraintViolation,
                  "leaf " + std::to_string(id) + " must be a 1-D Gaussian");
    }
    gs.push_back(leaf_gaussian(spec));
    mu[id] = discretize_gaussian(points, gs.back()).weights;
  }
  Eigen::VectorXd phi = Eigen::VectorXd::Ones(grid);
  if (cfg.root_mode == "internal") {
    phi = discretize_gaussian(points, reference_gaussian_design(gs, cfg.alpha)).weights;
  }
  const TreeKernelSet k = make_tree_kernels(tree, points, cfg.epsilon, cfg.root, phi);
  const SinkhornResult r = tree_sinkhorn_mp(k, mu, tol);
  nlohmann::ordered_json j;
  j["grid"] = vec(points.col(0));
  j["cycles"] = r.potentials.cycles;
  j["final_tv"] = r.final_tv;
  auto marg = nlohmann::ordered_json::object();
  for (std::size_t v = 0; v < r.node_marginals.size(); ++v) {
    marg[std::to_string(v)] = vec(r.node_marginals[v]);
  }
  j["node_marginals"] = std::move(marg);
  return j;
}

}  // namespace treedsb
