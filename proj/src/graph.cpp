#include "lisa/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

namespace lisa {

namespace {

std::size_t fraction_count(double frac, std::size_t total) {
  return static_cast<std::size_t>(std::ceil(frac * static_cast<double>(total) - 1e-9));
}

void check_fraction(double frac, const char* what) {
  if (!(frac > 0.0 && frac <= 1.0)) {
    throw GraphError(std::string(what) + " must lie in (0, 1], got " + std::to_string(frac));
  }
}

}  // namespace

Edge make_edge(NodeId a, NodeId b) {
  if (a == b) {
    throw GraphError("self-loop on node " + std::to_string(a));
  }
  return a < b ? Edge{a, b} : Edge{b, a};
}

bool FeatureBox::contains(const Matrix& rows, double slack) const {
  if (rows.cols() != dim()) {
    return false;
  }
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      const double x = rows(r, c);
      if (!(x >= lower[c] - slack && x <= upper[c] + slack)) {
        return false;
      }
    }
  }
  return true;
}

void FeatureBox::project(Matrix& rows) const {
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    rows.row(r) = rows.row(r).cwiseMax(lower).cwiseMin(upper);
  }
}

SparseMatrix adjacency_from_edges(NodeId num_nodes, std::span<const Edge> edges) {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(edges.size() * 2);
  for (const Edge& e : edges) {
    triplets.emplace_back(e.u, e.v, 1.0);
    triplets.emplace_back(e.v, e.u, 1.0);
  }
  SparseMatrix adjacency(num_nodes, num_nodes);
  adjacency.setFromTriplets(triplets.begin(), triplets.end());
  adjacency.makeCompressed();
  return adjacency;
}

// ---------------------------------------------------------------------------
// Graph

Graph::Graph(NodeId num_nodes, std::vector<Edge> edges, SparseMatrix features,
             std::vector<int> labels, int num_classes, std::vector<bool> train_mask,
             std::vector<bool> val_mask)
    : num_nodes_(num_nodes),
      edges_(std::move(edges)),
      features_(std::move(features)),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      train_mask_(std::move(train_mask)),
      val_mask_(std::move(val_mask)) {
  const auto n = static_cast<std::size_t>(num_nodes_);
  if (num_nodes_ < 0 || static_cast<std::size_t>(features_.rows()) != n || labels_.size() != n ||
      train_mask_.size() != n || val_mask_.size() != n) {
    throw GraphError("graph dimension mismatch: nodes/features/labels/masks disagree");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels_[i] < 0 || labels_[i] >= num_classes_) {
      throw GraphError("label out of range at node " + std::to_string(i));
    }
    if (train_mask_[i] && val_mask_[i]) {
      throw GraphError("train and validation masks overlap at node " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const Edge& e = edges_[i];
    if (e.u >= e.v || e.u < 0 || e.v >= num_nodes_) {
      throw GraphError("edge list must be canonical (u < v) and in range");
    }
    if (i > 0 && !(edges_[i - 1] < e)) {
      throw GraphError("edge list must be sorted and duplicate free");
    }
  }
  adjacency_ = adjacency_from_edges(num_nodes_, edges_);
  features_.makeCompressed();

  const Eigen::Index dim = features_.cols();
  box_.lower = RowVector::Constant(dim, std::numeric_limits<double>::infinity());
  box_.upper = RowVector::Constant(dim, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> stored(static_cast<std::size_t>(dim), 0);
  for (Eigen::Index r = 0; r < features_.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(features_, r); it; ++it) {
      box_.lower[it.col()] = std::min(box_.lower[it.col()], it.value());
      box_.upper[it.col()] = std::max(box_.upper[it.col()], it.value());
      ++stored[static_cast<std::size_t>(it.col())];
    }
  }
  for (Eigen::Index c = 0; c < dim; ++c) {
    if (stored[static_cast<std::size_t>(c)] < n) {
      box_.lower[c] = std::min(box_.lower[c], 0.0);
      box_.upper[c] = std::max(box_.upper[c], 0.0);
    }
  }
}

std::vector<NodeId> Graph::train_nodes() const {
  std::vector<NodeId> nodes;
  for (NodeId v = 0; v < num_nodes_; ++v) {
    if (train_mask_[static_cast<std::size_t>(v)]) {
      nodes.push_back(v);
    }
  }
  return nodes;
}

std::span<const NodeId> Graph::neighbors(NodeId v) const {
  if (v < 0 || v >= num_nodes_) {
    throw GraphError("node id out of range: " + std::to_string(v));
  }
  const auto* outer = adjacency_.outerIndexPtr();
  return {adjacency_.innerIndexPtr() + outer[v], static_cast<std::size_t>(outer[v + 1] - outer[v])};
}

bool Graph::has_edge(NodeId a, NodeId b) const {
  const auto row = neighbors(a);
  return std::binary_search(row.begin(), row.end(), b);
}

RowVector Graph::feature_row(NodeId v) const {
  RowVector row = RowVector::Zero(features_.cols());
  for (SparseMatrix::InnerIterator it(features_, v); it; ++it) {
    row[it.col()] = it.value();
  }
  return row;
}

RowVector Graph::feature_stddev() const {
  const Eigen::Index dim = features_.cols();
  RowVector sum = RowVector::Zero(dim);
  RowVector sum_sq = RowVector::Zero(dim);
  for (Eigen::Index r = 0; r < features_.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(features_, r); it; ++it) {
      sum[it.col()] += it.value();
      sum_sq[it.col()] += it.value() * it.value();
    }
  }
  const double n = std::max<double>(1.0, num_nodes_);
  const RowVector mean = sum / n;
  return (sum_sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0).cwiseSqrt();
}

Graph row_normalized(const Graph& g) {
  SparseMatrix f = g.features();
  for (Eigen::Index r = 0; r < f.outerSize(); ++r) {
    double total = 0.0;
    for (SparseMatrix::InnerIterator it(f, r); it; ++it) {
      total += std::abs(it.value());
    }
    if (total == 0.0) {
      continue;  // all-zero rows stay zero
    }
    for (SparseMatrix::InnerIterator it(f, r); it; ++it) {
      it.valueRef() /= total;
    }
  }
  return Graph(g.num_nodes(), {g.edges().begin(), g.edges().end()}, std::move(f),
               {g.labels().begin(), g.labels().end()}, g.num_classes(), g.train_mask(),
               g.val_mask());
}

Graph build_graph(NodeId num_nodes, std::span<const Edge> edges, SparseMatrix features,
                  std::vector<int> labels, const LabelSplitOptions& split, int num_classes) {
  if (num_nodes <= 0) {
    throw GraphError("graph must have at least one node");
  }
  if (features.rows() != num_nodes) {
    throw GraphError("feature rows (" + std::to_string(features.rows()) + ") != node count (" +
                     std::to_string(num_nodes) + ")");
  }
  if (labels.size() != static_cast<std::size_t>(num_nodes)) {
    throw GraphError("label count (" + std::to_string(labels.size()) + ") != node count (" +
                     std::to_string(num_nodes) + ")");
  }
  check_fraction(split.train_frac, "train_frac");
  if (split.val_frac < 0.0 || split.train_frac + split.val_frac > 1.0) {
    throw GraphError("val_frac must be >= 0 with train_frac + val_frac <= 1");
  }

  std::vector<Edge> canonical;
  canonical.reserve(edges.size());
  for (const Edge& e : edges) {
    if (e.u < 0 || e.v < 0 || e.u >= num_nodes || e.v >= num_nodes) {
      throw GraphError("edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) +
                       ") out of range");
    }
    canonical.push_back(make_edge(e.u, e.v));
  }
  std::sort(canonical.begin(), canonical.end());
  canonical.erase(std::unique(canonical.begin(), canonical.end()), canonical.end());

  if (num_classes < 0) {
    num_classes = 1 + *std::max_element(labels.begin(), labels.end());
  }

  const auto n = static_cast<std::size_t>(num_nodes);
  std::vector<NodeId> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(split.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = fraction_count(split.train_frac, n);
  const std::size_t n_val = std::min(n - n_train, fraction_count(split.val_frac, n));
  std::vector<bool> train(n, false);
  std::vector<bool> val(n, false);
  for (std::size_t i = 0; i < n_train; ++i) {
    train[static_cast<std::size_t>(order[i])] = true;
  }
  for (std::size_t i = n_train; i < n_train + n_val; ++i) {
    val[static_cast<std::size_t>(order[i])] = true;
  }
  return Graph(num_nodes, std::move(canonical), std::move(features), std::move(labels), num_classes,
               std::move(train), std::move(val));
}

Graph build_graph(std::span<const Edge> edges, const Matrix& features, std::vector<int> labels,
                  double train_frac, std::uint64_t seed) {
  SparseMatrix sparse = features.sparseView(0.0, 0.0);
  return build_graph(static_cast<NodeId>(features.rows()), edges, std::move(sparse),
                     std::move(labels), LabelSplitOptions{train_frac, 0.0, seed});
}

// ---------------------------------------------------------------------------
// Subgraph

Subgraph::Subgraph(Matrix adjacency, Matrix features)
    : adjacency_(std::move(adjacency)), features_(std::move(features)) {
  if (adjacency_.rows() != adjacency_.cols() || features_.rows() != adjacency_.rows()) {
    throw GraphError("subgraph dimension mismatch");
  }
  edge_budget_ = num_edges();
  if (!valid()) {
    throw GraphError("subgraph adjacency must be symmetric, binary and loop free");
  }
}

Subgraph Subgraph::empty(Eigen::Index feature_dim) {
  return Subgraph(Matrix(0, 0), Matrix(0, feature_dim));
}

Subgraph Subgraph::from_edges(NodeId num_nodes, std::span<const Edge> edges, Matrix features) {
  Matrix adjacency = Matrix::Zero(num_nodes, num_nodes);
  for (const Edge& e : edges) {
    const Edge c = make_edge(e.u, e.v);
    if (c.v >= num_nodes || c.u < 0) {
      throw GraphError("subgraph edge out of range");
    }
    adjacency(c.u, c.v) = adjacency(c.v, c.u) = 1.0;
  }
  return Subgraph(std::move(adjacency), std::move(features));
}

std::size_t Subgraph::num_edges() const {
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < adjacency_.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < adjacency_.cols(); ++j) {
      count += adjacency_(i, j) != 0.0 ? 1 : 0;
    }
  }
  return count;
}

std::vector<Edge> Subgraph::edges() const {
  std::vector<Edge> out;
  for (NodeId i = 0; i < num_nodes(); ++i) {
    for (NodeId j = i + 1; j < num_nodes(); ++j) {
      if (adjacency_(i, j) != 0.0) {
        out.push_back({i, j});
      }
    }
  }
  return out;
}

void Subgraph::set_features(Matrix features) {
  if (features.rows() != features_.rows() || features.cols() != features_.cols()) {
    throw GraphError("subgraph feature shape cannot change");
  }
  features_ = std::move(features);
}

void Subgraph::swap_edge(Edge removed, Edge added) {
  removed = make_edge(removed.u, removed.v);
  added = make_edge(added.u, added.v);
  if (removed.v >= num_nodes() || added.v >= num_nodes() || removed.u < 0 || added.u < 0) {
    throw GraphError("edge swap out of range");
  }
  if (!has_edge(removed.u, removed.v) || has_edge(added.u, added.v)) {
    throw GraphError("edge swap must remove a present edge and add an absent one");
  }
  adjacency_(removed.u, removed.v) = adjacency_(removed.v, removed.u) = 0.0;
  adjacency_(added.u, added.v) = adjacency_(added.v, added.u) = 1.0;
}

bool Subgraph::valid() const {
  for (Eigen::Index i = 0; i < adjacency_.rows(); ++i) {
    if (adjacency_(i, i) != 0.0) {
      return false;
    }
    for (Eigen::Index j = 0; j < adjacency_.cols(); ++j) {
      const double a = adjacency_(i, j);
      if ((a != 0.0 && a != 1.0) || a != adjacency_(j, i)) {
        return false;
      }
    }
  }
  return num_edges() == edge_budget_;
}

// ---------------------------------------------------------------------------
// PoisonedGraph

PoisonedGraph::PoisonedGraph(const Graph& host, Subgraph payload, std::vector<Edge> cross_links)
    : host_(&host), payload_(std::move(payload)), cross_links_(std::move(cross_links)) {
  if (payload_.num_nodes() > 0 && payload_.feature_dim() != host.num_features()) {
    throw GraphError("payload feature dimension (" + std::to_string(payload_.feature_dim()) +
                     ") != host feature dimension (" + std::to_string(host.num_features()) + ")");
  }
  for (Edge& e : cross_links_) {
    e = make_edge(e.u, e.v);
    if (e.u < 0 || e.v >= num_nodes() || is_payload(e.u) || !is_payload(e.v)) {
      throw GraphError("cross link must join a host node and a payload node");
    }
  }
  std::sort(cross_links_.begin(), cross_links_.end());
  if (std::adjacent_find(cross_links_.begin(), cross_links_.end()) != cross_links_.end()) {
    throw GraphError("duplicate cross link");
  }
}

std::size_t PoisonedGraph::num_edges() const {
  return host_->num_edges() + payload_.num_edges() + cross_links_.size();
}

bool PoisonedGraph::has_edge(NodeId a, NodeId b) const {
  if (a == b) {
    return false;
  }
  const Edge e = make_edge(a, b);
  if (!is_payload(e.v)) {
    return host_->has_edge(e.u, e.v);
  }
  if (is_payload(e.u)) {
    return payload_.has_edge(e.u - num_host(), e.v - num_host());
  }
  return std::binary_search(cross_links_.begin(), cross_links_.end(), e);
}

std::vector<NodeId> PoisonedGraph::neighbors(NodeId v) const {
  if (v < 0 || v >= num_nodes()) {
    throw GraphError("node id out of range: " + std::to_string(v));
  }
  std::vector<NodeId> out;
  if (!is_payload(v)) {
    const auto host_neighbors = host_->neighbors(v);
    out.assign(host_neighbors.begin(), host_neighbors.end());
  } else {
    const NodeId local = v - num_host();
    for (NodeId j = 0; j < num_payload(); ++j) {
      if (payload_.has_edge(local, j)) {
        out.push_back(global_id(j));
      }
    }
  }
  for (const Edge& e : cross_links_) {
    if (e.u == v) {
      out.push_back(e.v);
    } else if (e.v == v) {
      out.push_back(e.u);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

SparseMatrix PoisonedGraph::adjacency() const {
  std::vector<Edge> all(host_->edges().begin(), host_->edges().end());
  for (const Edge& e : payload_.edges()) {
    all.push_back({global_id(e.u), global_id(e.v)});
  }
  all.insert(all.end(), cross_links_.begin(), cross_links_.end());
  return adjacency_from_edges(num_nodes(), all);
}

RowVector PoisonedGraph::feature_row(NodeId v) const {
  if (v < 0 || v >= num_nodes()) {
    throw GraphError("node id out of range: " + std::to_string(v));
  }
  return is_payload(v) ? RowVector(payload_.features().row(v - num_host()))
                       : host_->feature_row(v);
}

Matrix PoisonedGraph::dense_features() const {
  Matrix out(num_nodes(), host_->num_features());
  out.topRows(num_host()) = Matrix(host_->features());
  if (num_payload() > 0) {
    out.bottomRows(num_payload()) = payload_.features();
  }
  return out;
}

PoisonedGraph compose_poisoned(const Graph& host, Subgraph payload) {
  return PoisonedGraph(host, std::move(payload));
}

// ---------------------------------------------------------------------------
// Operators and queries

SparseMatrix normalize_adjacency(const SparseMatrix& adjacency) {
  if (adjacency.rows() != adjacency.cols()) {
    throw GraphError("adjacency must be square");
  }
  const Eigen::Index n = adjacency.rows();
  Vector inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    inv_sqrt[i] = 1.0 / std::sqrt(1.0 + adjacency.row(i).sum());
  }
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(adjacency.nonZeros() + n));
  for (Eigen::Index i = 0; i < n; ++i) {
    triplets.emplace_back(i, i, inv_sqrt[i] * inv_sqrt[i]);
    for (SparseMatrix::InnerIterator it(adjacency, i); it; ++it) {
      triplets.emplace_back(i, it.col(), inv_sqrt[i] * it.value() * inv_sqrt[it.col()]);
    }
  }
  SparseMatrix out(n, n);
  out.setFromTriplets(triplets.begin(), triplets.end());
  out.makeCompressed();
  return out;
}

std::vector<NodeId> n_hop_neighborhood(const Graph& g, NodeId v, int hops) {
  if (v < 0 || v >= g.num_nodes()) {
    throw GraphError("node id out of range: " + std::to_string(v));
  }
  if (hops < 0) {
    throw GraphError("hop count must be non-negative");
  }
  std::vector<int> dist(static_cast<std::size_t>(g.num_nodes()), -1);
  std::vector<NodeId> out{v};
  std::queue<NodeId> frontier;
  dist[static_cast<std::size_t>(v)] = 0;
  frontier.push(v);
  while (!frontier.empty()) {
    const NodeId u = frontier.front();
    frontier.pop();
    const int d = dist[static_cast<std::size_t>(u)];
    if (d == hops) {
      continue;
    }
    for (NodeId w : g.neighbors(u)) {
      if (dist[static_cast<std::size_t>(w)] < 0) {
        dist[static_cast<std::size_t>(w)] = d + 1;
        out.push_back(w);
        frontier.push(w);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

EdgeSplit edge_split(const Graph& g, double train_frac, double label_frac, std::uint64_t seed) {
  check_fraction(train_frac, "train_frac");
  check_fraction(label_frac, "label_frac");
  if (g.num_edges() == 0) {
    throw GraphError("cannot split the edges of an edgeless graph");
  }
  std::vector<Edge> edges(g.edges().begin(), g.edges().end());
  Rng rng(seed);
  std::shuffle(edges.begin(), edges.end(), rng);
  const std::size_t n_train = fraction_count(train_frac, edges.size());

  EdgeSplit split;
  split.train_edges.assign(edges.begin(), edges.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.held_out.assign(edges.begin() + static_cast<std::ptrdiff_t>(n_train), edges.end());

  std::vector<Edge> shuffled = split.train_edges;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  shuffled.resize(fraction_count(label_frac, shuffled.size()));
  split.positive_labels = std::move(shuffled);

  std::sort(split.train_edges.begin(), split.train_edges.end());
  std::sort(split.positive_labels.begin(), split.positive_labels.end());
  std::sort(split.held_out.begin(), split.held_out.end());
  return split;
}

std::vector<Edge> sample_negative_edges(const PoisonedGraph& g, int per_positive,
                                        std::span<const Edge> positives, Rng& rng) {
  if (per_positive < 1) {
    throw GraphError("negatives per positive must be >= 1");
  }
  const auto n = static_cast<std::uint64_t>(g.num_nodes());
  const std::uint64_t pairs = n * (n - 1) / 2;
  const std::uint64_t present = g.num_edges();
  if (n < 2 || present >= pairs) {
    throw GraphError("graph is complete; no negative pairs exist");
  }
  const std::size_t count = positives.size() * static_cast<std::size_t>(per_positive);
  std::vector<Edge> out;
  out.reserve(count);

  // Rejection sampling is fine unless non-edges are rare; then enumerate them.
  if (pairs - present < pairs / 100 + 1) {
    std::vector<Edge> non_edges;
    for (NodeId i = 0; i < g.num_nodes(); ++i) {
      for (NodeId j = i + 1; j < g.num_nodes(); ++j) {
        if (!g.has_edge(i, j)) {
          non_edges.push_back({i, j});
        }
      }
    }
    std::uniform_int_distribution<std::size_t> pick(0, non_edges.size() - 1);
    for (std::size_t k = 0; k < count; ++k) {
      out.push_back(non_edges[pick(rng)]);
    }
    return out;
  }

  std::uniform_int_distribution<NodeId> node(0, g.num_nodes() - 1);
  while (out.size() < count) {
    const NodeId a = node(rng);
    const NodeId b = node(rng);
    if (a == b || g.has_edge(a, b)) {
      continue;
    }
    out.push_back(make_edge(a, b));
  }
  return out;
}

std::vector<Edge> sample_negative_edges(const PoisonedGraph& g, int per_positive,
                                        std::span<const Edge> positives, std::uint64_t seed) {
  Rng rng(seed);
  return sample_negative_edges(g, per_positive, positives, rng);
}

// ---------------------------------------------------------------------------
// Model views

ModelGraph model_graph(const PoisonedGraph& g, std::span<const Edge> host_edges,
                       PayloadBlock block) {
  ModelGraph view;
  view.host_features = &g.host().features();
  view.payload_features = g.payload().features();
  if (view.payload_features.cols() != g.host().num_features()) {
    view.payload_features = Matrix(0, g.host().num_features());
  }
  std::vector<Edge> all(host_edges.begin(), host_edges.end());
  if (block == PayloadBlock::merged) {
    for (const Edge& e : g.payload().edges()) {
      all.push_back({g.global_id(e.u), g.global_id(e.v)});
    }
  } else {
    view.payload_block = g.payload().adjacency();
  }
  all.insert(all.end(), g.cross_links().begin(), g.cross_links().end());
  view.adjacency = adjacency_from_edges(g.num_nodes(), all);
  return view;
}

ModelGraph model_graph(const PoisonedGraph& g, PayloadBlock block) {
  return model_graph(g, g.host().edges(), block);
}

ModelGraph model_graph(const Graph& g) {
  ModelGraph view;
  view.host_features = &g.features();
  view.payload_features = Matrix(0, g.num_features());
  view.adjacency = g.adjacency();
  return view;
}

}  // namespace lisa
