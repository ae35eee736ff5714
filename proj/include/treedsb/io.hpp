#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "treedsb/drift_net.hpp"
#include "treedsb/engine.hpp"
#include "treedsb/measures.hpp"

namespace treedsb {

// Shortest round-trip decimal form.
std::string format_double(double v);

// Header x0,...,x{d-1}, one sample per row.
void write_samples_csv(const std::filesystem::path& path, const SampleSet& s);
// Throws Io when unreadable and SchemaError (with the 1-based line) on a
// bad header, ragged row or non-numeric cell.
SampleSet read_samples_csv(const std::filesystem::path& path);

// One metrics.jsonl record. Holds no timestamps so reruns are byte-identical.
nlohmann::ordered_json metrics_record(const IterationMetrics& m);

// checkpoint/manifest.json plus one little-endian float32 file per directed
// edge holding the parameters followed by the Adam moments.
void write_checkpoint(const std::filesystem::path& dir,
                      const TreeDsbEngine& engine);

struct CheckpointEntry {
  DirectedEdge edge;
  DriftNet<float> net;
  AdamState<float> adam;
};
std::map<DirectedEdge, CheckpointEntry> read_checkpoint(
    const std::filesystem::path& dir);

}  // namespace treedsb
