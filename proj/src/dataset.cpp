#include "lisa/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace lisa {

namespace {

using nlohmann::json;

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DatasetError("cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

/// Splits `text` into lines and comma separated fields, calling
/// `on_field(row, col, token)` for each field.
template <typename OnField>
std::size_t for_each_field(std::string_view text, OnField&& on_field) {
  std::size_t row = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) {
      end = text.size();
    }
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') {
      line.remove_suffix(1);
    }
    if (!line.empty()) {
      std::size_t col = 0;
      std::size_t start = 0;
      while (true) {
        const std::size_t comma = line.find(',', start);
        const std::string_view token =
            line.substr(start, comma == std::string_view::npos ? line.size() - start : comma - start);
        on_field(row, col, token);
        ++col;
        if (comma == std::string_view::npos) {
          break;
        }
        start = comma + 1;
      }
      ++row;
    }
    pos = end + 1;
  }
  return row;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) {
    s.remove_suffix(1);
  }
  return s;
}

template <typename T>
T parse_number(std::string_view token, const char* file, std::size_t row) {
  token = trim(token);
  T value{};
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw DatasetError(std::string(file) + ": bad value '" + std::string(token) + "' on row " +
                       std::to_string(row + 1));
  }
  return value;
}

}  // namespace

DatasetMeta read_meta(const std::filesystem::path& dir) {
  json j;
  try {
    j = json::parse(slurp(dir / "meta.json"));
  } catch (const json::exception& e) {
    throw DatasetError("meta.json: " + std::string(e.what()));
  }
  DatasetMeta meta;
  try {
    meta.name = j.value("name", dir.filename().string());
    meta.num_nodes = j.at("num_nodes").get<NodeId>();
    meta.num_features = j.at("num_features").get<Eigen::Index>();
    meta.num_classes = j.at("num_classes").get<int>();
    meta.num_undirected_edges = j.value("num_undirected_edges", -1LL);
    meta.num_directed_entries = j.value("num_directed_entries", -1LL);
  } catch (const json::exception& e) {
    throw DatasetError("meta.json: " + std::string(e.what()));
  }
  return meta;
}

RawDataset read_raw_dataset(const std::filesystem::path& dir) {
  RawDataset raw;
  raw.meta = read_meta(dir);

  const std::string edges_text = slurp(dir / "edges.csv");
  NodeId pending = 0;
  for_each_field(edges_text, [&](std::size_t row, std::size_t col, std::string_view token) {
    if (col > 1) {
      throw DatasetError("edges.csv: expected two columns on row " + std::to_string(row + 1));
    }
    const auto id = parse_number<NodeId>(token, "edges.csv", row);
    if (col == 0) {
      pending = id;
    } else {
      raw.edges.push_back({pending, id});
    }
  });

  const std::string feature_text = slurp(dir / "features.csv");
  std::vector<Eigen::Triplet<double>> triplets;
  std::size_t widest = 0;
  const std::size_t rows =
      for_each_field(feature_text, [&](std::size_t row, std::size_t col, std::string_view token) {
        const double value = parse_number<double>(token, "features.csv", row);
        if (value != 0.0) {
          triplets.emplace_back(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col),
                                value);
        }
        widest = std::max(widest, col + 1);
      });
  if (static_cast<Eigen::Index>(widest) > raw.meta.num_features) {
    throw DatasetError("features.csv has " + std::to_string(widest) +
                       " columns but meta.json declares " +
                       std::to_string(raw.meta.num_features));
  }
  raw.features.resize(static_cast<Eigen::Index>(rows), raw.meta.num_features);
  raw.features.setFromTriplets(triplets.begin(), triplets.end());
  raw.features.makeCompressed();

  const std::string label_text = slurp(dir / "labels.csv");
  for_each_field(label_text, [&](std::size_t row, std::size_t, std::string_view token) {
    raw.labels.push_back(parse_number<int>(token, "labels.csv", row));
  });
  return raw;
}

Graph load_dataset(const std::filesystem::path& dir, const LabelSplitOptions& split) {
  RawDataset raw = read_raw_dataset(dir);
  if (raw.features.rows() != raw.meta.num_nodes) {
    throw DatasetError("features.csv has " + std::to_string(raw.features.rows()) +
                       " rows but meta.json declares " + std::to_string(raw.meta.num_nodes) +
                       " nodes");
  }
  return build_graph(raw.meta.num_nodes, raw.edges, std::move(raw.features), std::move(raw.labels),
                     split, raw.meta.num_classes);
}

bool ValidationReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::string ValidationReport::to_json() const {
  json j;
  j["dataset"] = dataset;
  j["passed"] = passed();
  j["checks"] = json::array();
  for (const auto& e : entries) {
    j["checks"].push_back({{"check", e.check}, {"passed", e.passed}, {"detail", e.detail}});
  }
  return j.dump(2);
}

ValidationReport validate_dataset(const std::filesystem::path& dir) {
  ValidationReport report;
  report.dataset = dir.string();
  auto add = [&](std::string check, bool ok, std::string detail) {
    report.entries.push_back({std::move(check), ok, std::move(detail)});
  };

  RawDataset raw;
  try {
    raw = read_raw_dataset(dir);
  } catch (const std::exception& e) {
    add("readable", false, e.what());
    return report;
  }
  add("readable", true, "meta.json, edges.csv, features.csv, labels.csv parsed");
  const DatasetMeta& meta = raw.meta;
  report.dataset = meta.name;

  add("feature rows", raw.features.rows() == meta.num_nodes,
      std::to_string(raw.features.rows()) + " rows, meta declares " +
          std::to_string(meta.num_nodes));
  add("label count", static_cast<NodeId>(raw.labels.size()) == meta.num_nodes,
      std::to_string(raw.labels.size()) + " labels");

  std::size_t out_of_range = 0;
  for (int y : raw.labels) {
    out_of_range += (y < 0 || y >= meta.num_classes) ? 1 : 0;
  }
  add("label range", out_of_range == 0,
      out_of_range == 0 ? "all labels in [0, " + std::to_string(meta.num_classes) + ")"
                        : "label out of range on " + std::to_string(out_of_range) + " rows");

  std::size_t self_loops = 0;
  std::size_t bad_endpoints = 0;
  std::set<Edge> unique;
  for (const Edge& e : raw.edges) {
    if (e.u < 0 || e.v < 0 || e.u >= meta.num_nodes || e.v >= meta.num_nodes) {
      ++bad_endpoints;
    } else if (e.u == e.v) {
      ++self_loops;
    } else {
      unique.insert(make_edge(e.u, e.v));
    }
  }
  add("self-loop", self_loops == 0,
      self_loops == 0 ? "none" : std::to_string(self_loops) + " self-loop rows");
  add("edge endpoints", bad_endpoints == 0,
      bad_endpoints == 0 ? "all in range" : std::to_string(bad_endpoints) + " out of range");
  add("duplicate edges", unique.size() + self_loops + bad_endpoints == raw.edges.size(),
      std::to_string(raw.edges.size() - unique.size() - self_loops - bad_endpoints) +
          " duplicate rows");

  // Symmetry after load: every stored (i, j) needs (j, i).
  const SparseMatrix adjacency =
      adjacency_from_edges(meta.num_nodes, std::vector<Edge>(unique.begin(), unique.end()));
  const SparseMatrix transposed = SparseMatrix(adjacency.transpose());
  add("symmetric adjacency", adjacency.isApprox(transposed) || adjacency.nonZeros() == 0,
      std::to_string(adjacency.nonZeros()) + " directed entries");

  if (meta.num_undirected_edges >= 0) {
    add("undirected edge count",
        static_cast<long long>(unique.size()) == meta.num_undirected_edges,
        std::to_string(unique.size()) + " vs meta " + std::to_string(meta.num_undirected_edges));
  }
  if (meta.num_directed_entries >= 0) {
    add("directed entry count", adjacency.nonZeros() == meta.num_directed_entries,
        std::to_string(adjacency.nonZeros()) + " vs meta " +
            std::to_string(meta.num_directed_entries));
  }
  std::set<int> classes(raw.labels.begin(), raw.labels.end());
  add("statistics", true,
      "nodes=" + std::to_string(meta.num_nodes) +
          " features=" + std::to_string(raw.features.cols()) +
          " classes=" + std::to_string(classes.size()) +
          " directed_entries=" + std::to_string(adjacency.nonZeros()));
  return report;
}

}  // namespace lisa
