#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "lisa/dataset.hpp"

namespace fs = std::filesystem;
using namespace lisa;

namespace {

struct TinyDataset {
  std::string meta = R"({"name": "tiny", "num_nodes": 4, "num_features": 2, "num_classes": 2,
                         "num_undirected_edges": 3, "num_directed_entries": 6})";
  std::string edges = "0,1\n1,2\n2,3\n";
  std::string features = "1,0\n0,1\n1,1\n0,0\n";
  std::string labels = "0\n1\n0\n1\n";

  fs::path write(const std::string& name) const {
    const fs::path dir = fs::temp_directory_path() / ("lisa_ds_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "meta.json") << meta;
    std::ofstream(dir / "edges.csv") << edges;
    std::ofstream(dir / "features.csv") << features;
    std::ofstream(dir / "labels.csv") << labels;
    return dir;
  }
};

bool check_failed(const ValidationReport& r, const std::string& name) {
  for (const auto& e : r.entries) {
    if (e.check == name) return !e.passed;
  }
  return false;
}

}  // namespace

TEST(Dataset, LoadsTinyDirectory) {
  const Graph g = load_dataset(TinyDataset{}.write("ok"), {0.5, 0.0, 1});
  EXPECT_EQ(g.num_nodes(), 4);
  EXPECT_EQ(g.num_edges(), 3u);
  EXPECT_EQ(g.num_classes(), 2);
  EXPECT_DOUBLE_EQ(g.feature_row(2)[1], 1.0);
  EXPECT_TRUE(validate_dataset(TinyDataset{}.write("ok")).passed());
}

TEST(Dataset, MissingFileIsDatasetError) {
  const fs::path dir = TinyDataset{}.write("missing");
  fs::remove(dir / "labels.csv");
  EXPECT_THROW(load_dataset(dir, {}), DatasetError);
  const ValidationReport r = validate_dataset(dir);
  EXPECT_FALSE(r.passed());
  EXPECT_TRUE(check_failed(r, "readable"));
}

TEST(Dataset, MalformedNumberIsDatasetError) {
  TinyDataset d;
  d.edges = "0,1\n1,x\n";
  EXPECT_THROW(load_dataset(d.write("nan"), {}), DatasetError);
}

TEST(Dataset, SelfLoopFailsValidation) {
  TinyDataset d;
  d.edges = "0,1\n1,2\n2,3\n3,3\n";
  const fs::path dir = d.write("loop");
  EXPECT_THROW(load_dataset(dir, {}), GraphError);
  EXPECT_TRUE(check_failed(validate_dataset(dir), "self-loop"));
}

TEST(Dataset, CountMismatchFailsValidation) {
  TinyDataset d;
  d.edges = "0,1\n1,2\n";
  EXPECT_TRUE(check_failed(validate_dataset(d.write("count")), "undirected edge count"));
  TinyDataset e;
  e.labels = "0\n1\n5\n1\n";
  EXPECT_TRUE(check_failed(validate_dataset(e.write("label")), "label range"));
}

TEST(Dataset, DuplicateRowsReportedButLoadDeduplicates) {
  TinyDataset d;
  d.edges = "0,1\n1,0\n1,2\n2,3\n";
  const fs::path dir = d.write("dup");
  EXPECT_TRUE(check_failed(validate_dataset(dir), "duplicate edges"));
  EXPECT_EQ(load_dataset(dir, {0.5, 0.0, 1}).num_edges(), 3u);
}

TEST(Dataset, CoraValidates) {
  const ValidationReport r = validate_dataset(lisa::fixture::cora_dir());
  EXPECT_TRUE(r.passed()) << r.to_json();
  EXPECT_EQ(r.dataset, "cora");
}
