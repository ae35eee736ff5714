#include "treedsb/config.hpp"

#include <charconv>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "treedsb/error.hpp"

namespace treedsb {

namespace {

struct Entry {
  std::string value;
  int line = 0;
  int column = 0;  // 1-based column of the value
};

[[noreturn]] void parse_error(int line, int col, const std::string& msg) {
  throw Error(ErrorCode::ParseError, "line " + std::to_string(line) +
                                         ", column " + std::to_string(col) +
                                         ": " + msg);
}

[[noreturn]] void violation(const std::string& key, const std::string& msg) {
  throw Error(ErrorCode::ConstraintViolation, key + ": " + msg);
}

bool key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

std::map<std::string, Entry> tokenize(std::string_view text) {
  std::map<std::string, Entry> out;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    std::size_t i = 0;
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i == line.size()) continue;
    const std::size_t key_start = i;
    while (i < line.size() && key_char(line[i])) ++i;
    if (i == key_start) {
      parse_error(line_no, int(i) + 1, "expected a key");
    }
    std::string key(line.substr(key_start, i - key_start));
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i == line.size() || line[i] != '=') {
      parse_error(line_no, int(i) + 1, "expected '=' after key '" + key + "'");
    }
    ++i;
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t val_end = line.size();
    while (val_end > i &&
           std::isspace(static_cast<unsigned char>(line[val_end - 1]))) {
      --val_end;
    }
    if (val_end == i) {
      parse_error(line_no, int(i) + 1, "missing value for '" + key + "'");
    }
    if (out.contains(key)) {
      parse_error(line_no, int(key_start) + 1, "duplicate key '" + key + "'");
    }
    out[key] = {std::string(line.substr(i, val_end - i)), line_no, int(i) + 1};
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const Entry& e) {
  T v{};
  const char* first = e.value.data();
  const char* last = first + e.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    parse_error(e.line, e.column + int(ptr - first),
                "bad number '" + e.value + "' for '" + key + "'");
  }
  return v;
}

std::vector<double> parse_list(const std::string& key, const Entry& e) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= e.value.size()) {
    std::size_t comma = e.value.find(',', start);
    if (comma == std::string::npos) comma = e.value.size();
    std::string item = e.value.substr(start, comma - start);
    const auto b = item.find_first_not_of(" \t");
    const auto en = item.find_last_not_of(" \t");
    Entry sub{b == std::string::npos ? "" : item.substr(b, en - b + 1), e.line,
              e.column + int(start + (b == std::string::npos ? 0 : b))};
    out.push_back(parse_number<double>(key, sub));
    start = comma + 1;
  }
  return out;
}

// "u-v:w, u-v:w, ..." with the weight optional (default 1).
std::vector<WeightedEdge> parse_edges(const std::string& key, const Entry& e) {
  std::vector<WeightedEdge> out;
  std::size_t start = 0;
  while (start <= e.value.size()) {
    std::size_t comma = e.value.find(',', start);
    if (comma == std::string::npos) comma = e.value.size();
    std::string item = e.value.substr(start, comma - start);
    const int col = e.column + int(start);
    const auto b = item.find_first_not_of(" \t");
    const auto en = item.find_last_not_of(" \t");
    if (b == std::string::npos) parse_error(e.line, col, "empty edge");
    item = item.substr(b, en - b + 1);
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      parse_error(e.line, col, "edge '" + item + "' must look like u-v[:w]");
    }
    const auto colon = item.find(':');
    WeightedEdge edge;
    edge.u = parse_number<int>(key, {item.substr(0, dash), e.line, col});
    edge.v = parse_number<int>(
        key, {item.substr(dash + 1, colon == std::string::npos
                                        ? std::string::npos
                                        : colon - dash - 1),
              e.line, col});
    if (colon != std::string::npos) {
      edge.weight = parse_number<double>(key, {item.substr(colon + 1), e.line, col});
    }
    out.push_back(edge);
    start = comma + 1;
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt(v[i]);
  }
  return out;
}

const std::set<std::string> kLeafKinds = {"gaussian", "swiss_roll", "circle",
                                          "moons", "csv"};

}  // namespace

ExperimentConfig parse_config_text(std::string_view text) {
  auto entries = tokenize(text);
  ExperimentConfig cfg;
  std::set<std::string> used;

  auto take = [&](const std::string& key) -> const Entry* {
    auto it = entries.find(key);
    if (it == entries.end()) return nullptr;
    used.insert(key);
    return &it->second;
  };
  auto num = [&]<class T>(const std::string& key, T& dst) {
    if (const Entry* e = take(key)) dst = parse_number<T>(key, *e);
  };
  auto str = [&](const std::string& key, std::string& dst) {
    if (const Entry* e = take(key)) dst = e->value;
  };

  // Leaf sections first: they fix K for the default star.
  std::set<NodeId> leaf_ids;
  for (const auto& [key, e] : entries) {
    if (!key.starts_with("leaf.")) continue;
    const auto dot = key.find('.', 5);
    if (dot == std::string::npos) {
      throw Error(ErrorCode::UnknownKey, "unknown key '" + key + "'");
    }
    const std::string id = key.substr(5, dot - 5);
    leaf_ids.insert(parse_number<int>(key, {id, e.line, 6}));
  }
  for (NodeId id : leaf_ids) {
    const std::string p = "leaf." + std::to_string(id) + ".";
    LeafSpec spec;
    spec.seed = 1000 + static_cast<std::uint64_t>(id);
    spec.cov_seed = 2000 + static_cast<std::uint64_t>(id);
    str(p + "kind", spec.kind);
    num(p + "count", spec.count);
    num(p + "seed", spec.seed);
    num(p + "dim", spec.dim);
    num(p + "cond", spec.cond);
    num(p + "scale", spec.scale);
    num(p + "cov_seed", spec.cov_seed);
    if (const Entry* e = take(p + "mean")) spec.mean = parse_list(p + "mean", *e);
    num(p + "noise", spec.noise);
    str(p + "path", spec.path);
    if (!kLeafKinds.contains(spec.kind)) violation(p + "kind", "unknown kind '" + spec.kind + "'");
    if (spec.count < 1) violation(p + "count", "must be >= 1");
    if (spec.dim < 1) violation(p + "dim", "must be >= 1");
    if (!(spec.cond >= 1.0)) violation(p + "cond", "must be >= 1");
    if (!(spec.scale > 0.0)) violation(p + "scale", "must be > 0");
    if (!(spec.noise >= 0.0)) violation(p + "noise", "must be >= 0");
    if (!spec.mean.empty() && static_cast<int>(spec.mean.size()) != spec.dim) {
      violation(p + "mean", "needs " + std::to_string(spec.dim) + " entries");
    }
    if (spec.kind == "csv" && spec.path.empty()) violation(p + "path", "required for csv leaves");
    cfg.leaves[id] = spec;
  }

  num("tree.nodes", cfg.nodes);
  if (const Entry* e = take("tree.edges")) cfg.edges = parse_edges("tree.edges", *e);
  if (cfg.edges.empty()) {
    const int k = static_cast<int>(leaf_ids.size());
    if (k < 2) violation("tree.edges", "omitted, and fewer than two leaf sections");
    double w = 1.0 / k;
    num("tree.weight", w);
    if (cfg.nodes == 0) cfg.nodes = k + 1;
    for (int i = 1; i <= k; ++i) cfg.edges.push_back({0, i, w});
  } else if (cfg.nodes == 0) {
    for (const auto& e : cfg.edges) cfg.nodes = std::max({cfg.nodes, e.u + 1, e.v + 1});
  }
  num("problem.epsilon", cfg.epsilon);
  str("root.mode", cfg.root_mode);
  num("root.node", cfg.root);
  num("root.alpha", cfg.alpha);
  num("root.samples", cfg.root_samples);

  num("schedule.steps", cfg.train.steps);
  num("schedule.gamma0", cfg.train.gamma0);
  num("train.lr", cfg.train.lr);
  num("train.batch", cfg.train.batch);
  num("train.iters", cfg.train.iters_per_ipf);
  num("train.refresh_every", cfg.train.refresh_every);
  num("train.cache_size", cfg.train.cache_size);
  num("train.loss_window", cfg.train.loss_window);
  if (const Entry* e = take("train.activation")) {
    try {
      cfg.train.activation = parse_activation(e->value);
    } catch (const Error&) {
      violation("train.activation", "unknown activation '" + e->value + "'");
    }
  }
  num("run.cycles", cfg.cycles);
  num("run.seed", cfg.seed);
  str("eval.target", cfg.eval_target);
  num("eval.count", cfg.eval_count);
  num("eval.sample_count", cfg.sample_count);

  for (const auto& [key, e] : entries) {
    if (!used.contains(key)) {
      throw Error(ErrorCode::UnknownKey, "unknown key '" + key + "' on line " +
                                             std::to_string(e.line));
    }
  }

  // Structural checks. Tree shape errors keep their own codes.
  const UndirectedTree tree = UndirectedTree::build(cfg.nodes, cfg.edges);
  if (!(cfg.epsilon > 0.0)) violation("problem.epsilon", "must be > 0");
  const auto leaves = tree.leaves();
  for (NodeId leaf : leaves) {
    if (!cfg.leaves.contains(leaf)) {
      violation("leaf." + std::to_string(leaf), "no dataset for this leaf");
    }
  }
  for (const auto& [id, spec] : cfg.leaves) {
    if (!tree.contains(id) || !tree.is_leaf(id)) {
      violation("leaf." + std::to_string(id), "node is not a leaf");
    }
  }
  if (cfg.root_mode == "leaf") {
    if (cfg.root < 0) cfg.root = leaves.back();
    if (!tree.contains(cfg.root) || !tree.is_leaf(cfg.root)) {
      violation("root.node", "leaf mode needs a leaf root");
    }
  } else if (cfg.root_mode == "internal") {
    if (cfg.root < 0) {
      auto c = tree.star_center();
      if (!c) violation("root.node", "required for a non-star tree");
      cfg.root = *c;
    }
    if (!tree.contains(cfg.root) || tree.is_leaf(cfg.root)) {
      violation("root.node", "internal mode needs an interior root");
    }
    if (!(cfg.alpha > 0.0)) violation("root.alpha", "must be > 0");
    if (cfg.root_samples < 1) violation("root.samples", "must be >= 1");
  } else {
    violation("root.mode", "must be 'leaf' or 'internal'");
  }
  const auto& t = cfg.train;
  if (t.steps < 2 || t.steps % 2) violation("schedule.steps", "must be even and >= 2");
  if (!(t.gamma0 > 0.0)) violation("schedule.gamma0", "must be > 0");
  if (!(t.lr > 0.0)) violation("train.lr", "must be > 0");
  if (t.batch < 1) violation("train.batch", "must be >= 1");
  if (t.iters_per_ipf < 0) violation("train.iters", "must be >= 0");
  if (t.refresh_every < 1) violation("train.refresh_every", "must be >= 1");
  if (t.cache_size < 1) violation("train.cache_size", "must be >= 1");
  if (t.loss_window < 1) violation("train.loss_window", "must be >= 1");
  if (cfg.cycles < 1) violation("run.cycles", "must be >= 1");
  if (cfg.eval_target != "none" && cfg.eval_target != "barycenter") {
    violation("eval.target", "must be 'none' or 'barycenter'");
  }
  if (cfg.eval_target == "barycenter") {
    if (!tree.star_center()) violation("eval.target", "barycenter needs a star tree");
    for (const auto& [id, spec] : cfg.leaves) {
      if (spec.kind != "gaussian") {
        violation("eval.target", "barycenter needs Gaussian leaves");
      }
    }
  }
  if (cfg.eval_count < 2) violation("eval.count", "must be >= 2");
  if (cfg.sample_count < 1) violation("eval.sample_count", "must be >= 1");
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "tree.nodes = " << cfg.nodes << "\n";
  out << "tree.edges = ";
  for (std::size_t i = 0; i < cfg.edges.size(); ++i) {
    const auto& e = cfg.edges[i];
    out << (i ? ", " : "") << e.u << "-" << e.v << ":" << fmt(e.weight);
  }
  out << "\n";
  out << "problem.epsilon = " << fmt(cfg.epsilon) << "\n";
  out << "root.mode = " << cfg.root_mode << "\n";
  out << "root.node = " << cfg.root << "\n";
  out << "root.alpha = " << fmt(cfg.alpha) << "\n";
  out << "root.samples = " << cfg.root_samples << "\n";
  for (const auto& [id, s] : cfg.leaves) {
    const std::string p = "leaf." + std::to_string(id) + ".";
    out << p << "kind = " << s.kind << "\n";
    out << p << "count = " << s.count << "\n";
    out << p << "seed = " << s.seed << "\n";
    out << p << "dim = " << s.dim << "\n";
    out << p << "cond = " << fmt(s.cond) << "\n";
    out << p << "scale = " << fmt(s.scale) << "\n";
    out << p << "cov_seed = " << s.cov_seed << "\n";
    if (!s.mean.empty()) out << p << "mean = " << fmt_list(s.mean) << "\n";
    out << p << "noise = " << fmt(s.noise) << "\n";
    if (!s.path.empty()) out << p << "path = " << s.path << "\n";
  }
  const auto& t = cfg.train;
  out << "schedule.steps = " << t.steps << "\n";
  out << "schedule.gamma0 = " << fmt(t.gamma0) << "\n";
  out << "train.lr = " << fmt(t.lr) << "\n";
  out << "train.batch = " << t.batch << "\n";
  out << "train.iters = " << t.iters_per_ipf << "\n";
  out << "train.refresh_every = " << t.refresh_every << "\n";
  out << "train.cache_size = " << t.cache_size << "\n";
  out << "train.loss_window = " << t.loss_window << "\n";
  out << "train.activation = " << activation_name(t.activation) << "\n";
  out << "run.cycles = " << cfg.cycles << "\n";
  out << "run.seed = " << cfg.seed << "\n";
  out << "eval.target = " << cfg.eval_target << "\n";
  out << "eval.count = " << cfg.eval_count << "\n";
  out << "eval.sample_count = " << cfg.sample_count << "\n";
  return out.str();
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : serialize_config(cfg)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void apply_env_overrides(ExperimentConfig& cfg) {
  const char* s = std::getenv("TREEDSB_SEED");
  if (!s) return;
  const std::string v(s);
  cfg.seed = parse_number<std::uint64_t>("TREEDSB_SEED", {v, 0, 1});
}

}  // namespace treedsb
