#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include <memory>

#include "lisa/attack.hpp"
#include "lisa/graph.hpp"
#include "lisa/models.hpp"

namespace lisa::fixture {

inline Graph path_graph(NodeId n, Eigen::Index dim = 3, int classes = 2) {
  std::vector<Edge> edges;
  for (NodeId i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1});
  Matrix f = Matrix::Zero(n, dim);
  std::vector<int> labels;
  for (NodeId i = 0; i < n; ++i) {
    f(i, i % dim) = 1.0;
    labels.push_back(i % classes);
  }
  return build_graph(edges, f, labels, 0.5, 1);
}

/// Connected random graph (a spanning path plus random chords) with
/// uniform features in [0, 1) and labels cycling through `classes`.
inline Graph random_graph(NodeId n, Eigen::Index dim, int classes, std::uint64_t seed,
                          double extra = 0.3, double train_frac = 0.5) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Edge> edges;
  for (NodeId i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1});
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId j = i + 2; j < n; ++j) {
      if (unit(rng) < extra) edges.push_back({i, j});
    }
  }
  Matrix f(n, dim);
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    for (Eigen::Index c = 0; c < f.cols(); ++c) f(r, c) = unit(rng);
  }
  std::vector<int> labels;
  for (NodeId i = 0; i < n; ++i) labels.push_back(i % classes);
  return build_graph(edges, f, labels, train_frac, seed);
}

inline Subgraph random_subgraph(NodeId n, int edges, Eigen::Index dim, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Edge> pairs;
  for (NodeId i = 0; i < n; ++i)
    for (NodeId j = i + 1; j < n; ++j) pairs.push_back({i, j});
  std::shuffle(pairs.begin(), pairs.end(), rng);
  pairs.resize(static_cast<std::size_t>(edges));
  Matrix f(n, dim);
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    for (Eigen::Index c = 0; c < f.cols(); ++c) f(r, c) = unit(rng);
  }
  return Subgraph::from_edges(n, pairs, f);
}

inline std::filesystem::path cora_dir() { return std::filesystem::path(LISA_DATA_DIR) / "cora"; }

/// Writes `g` in the neutral dataset layout and returns the directory.
inline std::filesystem::path write_dataset(const Graph& g, const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("lisa_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "meta.json") << "{\"name\": \"" << name << "\", \"num_nodes\": "
                                   << g.num_nodes() << ", \"num_features\": " << g.num_features()
                                   << ", \"num_classes\": " << g.num_classes() << "}";
  std::ofstream edges(dir / "edges.csv");
  for (const Edge& e : g.edges()) edges << e.u << ',' << e.v << '\n';
  std::ofstream features(dir / "features.csv");
  features.precision(17);
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    const RowVector r = g.feature_row(v);
    for (Eigen::Index c = 0; c < r.size(); ++c) features << (c ? "," : "") << r[c];
    features << '\n';
  }
  std::ofstream labels(dir / "labels.csv");
  for (int y : g.labels()) labels << y << '\n';
  return dir;
}

/// A small attack-loss evaluation with random surrogates. Heap allocated
/// because the model graphs point into the host.
struct LossInstance {
  Graph host;
  PoisonedGraph g_p;
  PoisonedGraph g_r;
  ModelGraph link;
  ModelGraph cls;
  LinkPredictorParams phi;
  ClassifierParams theta;
  AttackLabel label;
  std::vector<Edge> pairs;
  std::vector<Edge> negatives;
  double alpha = 1.0;

  LossInstance(Graph h, Subgraph payload, std::vector<Edge> cross)
      : host(std::move(h)),
        g_p(host, payload),
        g_r(host, payload, std::move(cross)),
        link(model_graph(g_p, PayloadBlock::separate)),
        cls(model_graph(g_r, PayloadBlock::separate)) {}

  AttackLossInputs inputs() const {
    AttackLossInputs in;
    in.link_graph = &link;
    in.cls_graph = &cls;
    in.phi = &phi;
    in.theta = &theta;
    in.label = label;
    in.candidate_pairs = pairs;
    in.negatives = negatives;
    in.alpha = alpha;
    in.track_branches = true;
    return in;
  }

  /// Total loss with the payload features (or block) replaced.
  ad::Probe probe_features(const Matrix& f) {
    const Matrix keep = link.payload_features;
    link.payload_features = f;
    cls.payload_features = f;
    const AttackLossResult r = attack_loss(inputs());
    link.payload_features = keep;
    cls.payload_features = keep;
    return {r.total, r.branch};
  }
  ad::Probe probe_block(const Matrix& a) {
    const Matrix keep = link.payload_block;
    link.payload_block = a;
    cls.payload_block = a;
    const AttackLossResult r = attack_loss(inputs());
    link.payload_block = keep;
    cls.payload_block = keep;
    return {r.total, r.branch};
  }
};

/// Random host of `host_nodes` nodes and `dim` features, a payload of
/// `n_V` nodes linked to target 0, random GAE and GCN surrogates.
inline std::unique_ptr<LossInstance> loss_instance(std::uint64_t seed, NodeId host_nodes, NodeId n_V,
                                                   Eigen::Index dim = 6, int classes = 3,
                                                   Activation act = Activation::relu) {
  Rng rng(seed);
  Graph host = random_graph(host_nodes, dim, classes, seed, 0.25);
  const int n_E = std::max(1, static_cast<int>(n_V) - 1);
  Subgraph payload = random_subgraph(n_V, n_E, dim, seed + 1000);
  std::vector<Edge> cross;
  for (NodeId i = 0; i < std::min<NodeId>(n_V, 2); ++i) cross.push_back({0, host_nodes + i});
  auto inst = std::make_unique<LossInstance>(std::move(host), std::move(payload), cross);
  inst->phi = init_link_predictor(LinkArch::gae, dim, rng, 8, 4);
  inst->theta = init_classifier(ClassifierArch::gcn, dim, classes, rng, 8);
  inst->theta.activation = act;
  inst->label = {0, 1};
  for (NodeId i = 0; i < n_V; ++i) inst->pairs.push_back({0, host_nodes + i});
  inst->negatives = sample_negative_edges(inst->g_p, 1, inst->pairs, seed + 7);
  inst->alpha = 0.7;
  return inst;
}

}  // namespace lisa::fixture
