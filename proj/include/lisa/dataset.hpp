#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lisa/graph.hpp"

namespace lisa {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Contents of meta.json in a neutral dataset directory.
struct DatasetMeta {
  std::string name;
  NodeId num_nodes = 0;
  Eigen::Index num_features = 0;
  int num_classes = 0;
  long long num_undirected_edges = -1;  // optional, -1 when absent
  long long num_directed_entries = -1;  // optional, -1 when absent
};

/// Raw, unvalidated dataset contents.
struct RawDataset {
  DatasetMeta meta;
  std::vector<Edge> edges;  // as listed, not canonicalized
  SparseMatrix features;
  std::vector<int> labels;
};

DatasetMeta read_meta(const std::filesystem::path& dir);
RawDataset read_raw_dataset(const std::filesystem::path& dir);

/// Loads a neutral-format directory (meta.json, edges.csv, features.csv,
/// labels.csv) and draws the label split. Throws DatasetError on I/O or
/// format problems and GraphError on invariant violations.
Graph load_dataset(const std::filesystem::path& dir, const LabelSplitOptions& split);

struct ValidationEntry {
  std::string check;
  bool passed = false;
  std::string detail;
};

struct ValidationReport {
  std::string dataset;
  std::vector<ValidationEntry> entries;

  bool passed() const;
  std::string to_json() const;
};

/// Checks graph invariants and meta.json consistency without throwing.
ValidationReport validate_dataset(const std::filesystem::path& dir);

}  // namespace lisa
