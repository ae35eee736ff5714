#include "treedsb/io.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "treedsb/error.hpp"

namespace treedsb {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path, bool binary = false) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  return out;
}

std::string edge_file(DirectedEdge e) {
  return "edge_" + std::to_string(e.from) + "_" + std::to_string(e.to) + ".bin";
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_samples_csv(const fs::path& path, const SampleSet& s) {
  auto out = open_out(path);
  for (Eigen::Index j = 0; j < s.dim(); ++j) {
    out << (j ? "," : "") << "x" << j;
  }
  out << "\n";
  std::string line;
  for (Eigen::Index i = 0; i < s.count(); ++i) {
    line.clear();
    for (Eigen::Index j = 0; j < s.dim(); ++j) {
      if (j) line += ',';
      line += format_double(s.data()(i, j));
    }
    line += '\n';
    out << line;
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

SampleSet read_samples_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  auto schema = [&](long line, const std::string& msg) {
    return Error(ErrorCode::SchemaError,
                 path.string() + " line " + std::to_string(line) + ": " + msg);
  };
  std::string line;
  if (!std::getline(in, line)) throw schema(1, "empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  Eigen::Index dim = 0;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (cell != "x" + std::to_string(dim)) {
        throw schema(1, "expected column 'x" + std::to_string(dim) + "', got '" +
                            cell + "'");
      }
      ++dim;
    }
  }
  if (dim == 0) throw schema(1, "no columns");

  std::vector<double> values;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Eigen::Index cols = 0;
    const char* p = line.data();
    const char* end = p + line.size();
    while (true) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(p, end, v);
      if (ec != std::errc() || !std::isfinite(v)) {
        throw schema(line_no, "bad number in column " + std::to_string(cols));
      }
      values.push_back(v);
      ++cols;
      if (ptr == end) break;
      if (*ptr != ',') {
        throw schema(line_no, "bad number in column " + std::to_string(cols - 1));
      }
      p = ptr + 1;
    }
    if (cols != dim) {
      throw schema(line_no, "expected " + std::to_string(dim) + " columns, got " +
                                std::to_string(cols));
    }
  }
  const Eigen::Index rows = static_cast<Eigen::Index>(values.size()) / dim;
  SampleMatrix m = Eigen::Map<SampleMatrix>(values.data(), rows, dim);
  return SampleSet(std::move(m));
}

nlohmann::ordered_json metrics_record(const IterationMetrics& m) {
  nlohmann::ordered_json j;
  j["iteration"] = m.iteration;
  j["cycle"] = m.cycle;
  j["start"] = m.start;
  j["leaf"] = m.target;
  auto edges = nlohmann::ordered_json::array();
  for (const auto& e : m.edges) {
    nlohmann::ordered_json r;
    r["simulated"] = {e.simulated.from, e.simulated.to};
    r["trained"] = {e.trained.from, e.trained.to};
    r["steps"] = e.steps;
    r["first_loss"] = e.first_loss;
    r["final_loss"] = e.final_loss;
    r["min_loss"] = e.min_loss;
    edges.push_back(std::move(r));
  }
  j["edges"] = std::move(edges);
  j["final_loss"] = m.edges.empty() ? 0.0 : m.edges.back().final_loss;
  if (m.uvp) {
    j["uvp"] = *m.uvp;
  } else {
    j["uvp"] = nullptr;
  }
  return j;
}

void write_checkpoint(const fs::path& dir, const TreeDsbEngine& engine) {
  fs::create_directories(dir);
  nlohmann::ordered_json manifest;
  const auto& models = engine.models();
  manifest["dim"] = models.begin()->second.dim();
  manifest["activation"] =
      std::string(activation_name(models.begin()->second.activation()));
  manifest["iteration"] = engine.iteration();
  auto edges = nlohmann::ordered_json::array();
  for (const auto& [e, net] : models) {
    const auto& adam = engine.adam(e);
    auto out = open_out(dir / edge_file(e), true);
    for (const auto* v : {&net.params(), &adam.m, &adam.v}) {
      out.write(reinterpret_cast<const char*>(v->data()),
                static_cast<std::streamsize>(v->size() * sizeof(float)));
    }
    if (!out) throw Error(ErrorCode::Io, "write failed in " + dir.string());
    nlohmann::ordered_json r;
    r["from"] = e.from;
    r["to"] = e.to;
    r["file"] = edge_file(e);
    r["param_count"] = net.param_count();
    r["adam_step"] = adam.step;
    r["lr"] = adam.lr;
    edges.push_back(std::move(r));
  }
  manifest["edges"] = std::move(edges);
  auto out = open_out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
}

std::map<DirectedEdge, CheckpointEntry> read_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorCode::Io, "cannot read " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& err) {
    throw Error(ErrorCode::SchemaError, std::string("manifest: ") + err.what());
  }
  std::map<DirectedEdge, CheckpointEntry> out;
  try {
    const int dim = manifest.at("dim").get<int>();
    const Activation act =
        parse_activation(manifest.at("activation").get<std::string>());
    for (const auto& r : manifest.at("edges")) {
      const DirectedEdge e{r.at("from").get<int>(), r.at("to").get<int>()};
      const auto n = r.at("param_count").get<Eigen::Index>();
      std::ifstream bin(dir / r.at("file").get<std::string>(), std::ios::binary);
      if (!bin) throw Error(ErrorCode::Io, "missing weights for edge");
      DriftNet<float>::Vec p(n);
      auto adam = AdamState<float>::zeros(n, r.at("lr").get<double>());
      adam.step = r.at("adam_step").get<long>();
      for (auto* v : {&p, &adam.m, &adam.v}) {
        bin.read(reinterpret_cast<char*>(v->data()),
                 static_cast<std::streamsize>(n * sizeof(float)));
      }
      if (!bin) throw Error(ErrorCode::SchemaError, "truncated weights file");
      out.emplace(e, CheckpointEntry{e, DriftNet<float>::from_params(dim, act, p),
                                     std::move(adam)});
    }
  } catch (const nlohmann::json::exception& err) {
    throw Error(ErrorCode::SchemaError, std::string("manifest: ") + err.what());
  }
  return out;
}

}  // namespace treedsb
