#pragma once

#include <compare>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace lisa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using NodeId = std::int32_t;
using Rng = std::mt19937_64;

/// Undirected edge, always stored with u < v.
struct Edge {
  NodeId u{0};
  NodeId v{0};

  auto operator<=>(const Edge&) const = default;
};

/// Canonical (ordered) undirected edge. Throws on self-loops.
Edge make_edge(NodeId a, NodeId b);

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-dimension value range of a feature matrix.
struct FeatureBox {
  RowVector lower;
  RowVector upper;

  Eigen::Index dim() const { return lower.size(); }
  bool contains(const Matrix& rows, double slack = 0.0) const;
  void project(Matrix& rows) const;
};

/// Immutable attributed undirected graph. Adjacency is binary, symmetric and
/// has an empty diagonal; features are stored sparse since the benchmark
/// datasets are bag-of-words.
class Graph {
 public:
  Graph(NodeId num_nodes, std::vector<Edge> edges, SparseMatrix features, std::vector<int> labels,
        int num_classes, std::vector<bool> train_mask, std::vector<bool> val_mask);

  NodeId num_nodes() const { return num_nodes_; }
  std::size_t num_edges() const { return edges_.size(); }
  Eigen::Index num_features() const { return features_.cols(); }
  int num_classes() const { return num_classes_; }

  const SparseMatrix& adjacency() const { return adjacency_; }
  const SparseMatrix& features() const { return features_; }
  std::span<const Edge> edges() const { return edges_; }
  std::span<const int> labels() const { return labels_; }
  const std::vector<bool>& train_mask() const { return train_mask_; }
  const std::vector<bool>& val_mask() const { return val_mask_; }
  std::vector<NodeId> train_nodes() const;

  std::span<const NodeId> neighbors(NodeId v) const;
  std::size_t degree(NodeId v) const { return neighbors(v).size(); }
  bool has_edge(NodeId a, NodeId b) const;

  RowVector feature_row(NodeId v) const;
  const FeatureBox& feature_box() const { return box_; }
  RowVector feature_stddev() const;

 private:
  NodeId num_nodes_;
  std::vector<Edge> edges_;
  SparseMatrix adjacency_;
  SparseMatrix features_;
  std::vector<int> labels_;
  int num_classes_;
  std::vector<bool> train_mask_;
  std::vector<bool> val_mask_;
  FeatureBox box_;
};

struct LabelSplitOptions {
  double train_frac = 0.05;
  double val_frac = 0.0;
  std::uint64_t seed = 0;
};

/// Validates the raw inputs, deduplicates edges and draws the label masks
/// (uniform sampling without replacement, ceil(frac * N) nodes).
/// num_classes < 0 infers max(label) + 1.
Graph build_graph(NodeId num_nodes, std::span<const Edge> edges, SparseMatrix features,
                  std::vector<int> labels, const LabelSplitOptions& split, int num_classes = -1);
Graph build_graph(std::span<const Edge> edges, const Matrix& features, std::vector<int> labels,
                  double train_frac, std::uint64_t seed);

/// Copy with every feature row scaled to unit L1 norm (standard GCN preprocessing).
/// Rows summing to zero are left alone. The feature box is recomputed.
Graph row_normalized(const Graph& g);

/// Mutable attack payload: a small dense graph with a fixed edge budget.
class Subgraph {
 public:
  Subgraph() = default;
  /// `adjacency` must be symmetric binary with zero diagonal; the budget is
  /// fixed to its current edge count.
  Subgraph(Matrix adjacency, Matrix features);
  static Subgraph empty(Eigen::Index feature_dim);
  static Subgraph from_edges(NodeId num_nodes, std::span<const Edge> edges, Matrix features);

  NodeId num_nodes() const { return static_cast<NodeId>(adjacency_.rows()); }
  Eigen::Index feature_dim() const { return features_.cols(); }
  std::size_t edge_budget() const { return edge_budget_; }
  std::size_t num_edges() const;
  std::vector<Edge> edges() const;
  bool has_edge(NodeId a, NodeId b) const { return adjacency_(a, b) != 0.0; }

  const Matrix& adjacency() const { return adjacency_; }
  const Matrix& features() const { return features_; }

  void set_features(Matrix features);
  /// Removes `removed` and inserts `added`, keeping the edge count fixed.
  void swap_edge(Edge removed, Edge added);

  /// Checks symmetry, zero diagonal, binary entries and the edge budget.
  bool valid() const;

 private:
  Matrix adjacency_;
  Matrix features_;
  std::size_t edge_budget_ = 0;
};

/// Host graph plus an isolated payload, optionally with links between them
/// (the recommended graph). Holds a non-owning pointer to the host, which
/// must outlive it. Payload node i has global id num_host() + i.
class PoisonedGraph {
 public:
  PoisonedGraph(const Graph& host, Subgraph payload, std::vector<Edge> cross_links = {});

  const Graph& host() const { return *host_; }
  const Subgraph& payload() const { return payload_; }
  std::span<const Edge> cross_links() const { return cross_links_; }

  NodeId num_host() const { return host_->num_nodes(); }
  NodeId num_payload() const { return payload_.num_nodes(); }
  NodeId num_nodes() const { return num_host() + num_payload(); }
  NodeId global_id(NodeId payload_index) const { return num_host() + payload_index; }
  bool is_payload(NodeId v) const { return v >= num_host(); }
  std::size_t num_edges() const;

  bool has_edge(NodeId a, NodeId b) const;
  std::vector<NodeId> neighbors(NodeId v) const;

  /// Materialized (N_o + n_V)^2 binary adjacency.
  SparseMatrix adjacency() const;
  RowVector feature_row(NodeId v) const;
  /// Materialized feature matrix; intended for small graphs.
  Matrix dense_features() const;

 private:
  const Graph* host_;
  Subgraph payload_;
  std::vector<Edge> cross_links_;
};

/// Composes the block-diagonal poisoned graph.
PoisonedGraph compose_poisoned(const Graph& host, Subgraph payload);

/// D^{-1/2}(A + I)D^{-1/2} with D the degree matrix of A + I.
SparseMatrix normalize_adjacency(const SparseMatrix& adjacency);

/// All nodes within `hops` of v (v included), ascending.
std::vector<NodeId> n_hop_neighborhood(const Graph& g, NodeId v, int hops);

struct EdgeSplit {
  std::vector<Edge> train_edges;
  std::vector<Edge> positive_labels;
  std::vector<Edge> held_out;
};

EdgeSplit edge_split(const Graph& g, double train_frac, double label_frac, std::uint64_t seed);

/// `per_positive` pairs per positive, uniform over non-adjacent distinct node pairs.
std::vector<Edge> sample_negative_edges(const PoisonedGraph& g, int per_positive,
                                        std::span<const Edge> positives, Rng& rng);
std::vector<Edge> sample_negative_edges(const PoisonedGraph& g, int per_positive,
                                        std::span<const Edge> positives, std::uint64_t seed);

/// Binary symmetric sparse matrix from an undirected edge list.
SparseMatrix adjacency_from_edges(NodeId num_nodes, std::span<const Edge> edges);

/// Graph as consumed by the message-passing models. The payload block can be
/// kept out of `adjacency` so that it can become a differentiable input.
struct ModelGraph {
  const SparseMatrix* host_features = nullptr;
  Matrix payload_features;
  SparseMatrix adjacency;
  Matrix payload_block;

  NodeId num_host() const { return static_cast<NodeId>(host_features->rows()); }
  NodeId num_payload() const { return static_cast<NodeId>(payload_features.rows()); }
  NodeId num_nodes() const { return num_host() + num_payload(); }
  Eigen::Index feature_dim() const { return host_features->cols(); }
  bool has_payload_block() const { return payload_block.size() > 0; }
};

enum class PayloadBlock { merged, separate };

/// Full view of the poisoned graph (host edges, payload edges, cross links).
ModelGraph model_graph(const PoisonedGraph& g, PayloadBlock block = PayloadBlock::merged);
/// Same, but with the host block restricted to `host_edges`.
ModelGraph model_graph(const PoisonedGraph& g, std::span<const Edge> host_edges,
                       PayloadBlock block = PayloadBlock::merged);
ModelGraph model_graph(const Graph& g);

}  // namespace lisa
