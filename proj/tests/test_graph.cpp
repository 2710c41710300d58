#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "lisa/dataset.hpp"
#include "lisa/graph.hpp"

using namespace lisa;
using lisa::fixture::path_graph;
using lisa::fixture::random_graph;
using lisa::fixture::random_subgraph;

TEST(BuildGraph, MinimalGraph) {
  const std::vector<Edge> edges{{0, 1}};
  const Graph g = build_graph(edges, Matrix::Zero(2, 3), {0, 1}, 0.5, 3);
  EXPECT_EQ(g.num_nodes(), 2);
  EXPECT_EQ(g.num_edges(), 1u);
  EXPECT_EQ(g.adjacency().coeff(0, 1), 1.0);
  EXPECT_EQ(g.adjacency().coeff(1, 0), 1.0);
  EXPECT_EQ(g.adjacency().nonZeros(), 2);
  EXPECT_EQ(std::count(g.train_mask().begin(), g.train_mask().end(), true), 1);
}

TEST(BuildGraph, RejectsSelfLoop) {
  const std::vector<Edge> edges{{0, 1}, {3, 3}};
  EXPECT_THROW(build_graph(edges, Matrix::Zero(4, 2), {0, 0, 1, 1}, 0.5, 1), GraphError);
}

TEST(BuildGraph, RejectsDimensionMismatch) {
  const std::vector<Edge> edges{{0, 1}};
  EXPECT_THROW(build_graph(edges, Matrix::Zero(3, 2), {0, 1}, 0.5, 1), GraphError);
  const std::vector<Edge> far{{0, 5}};
  EXPECT_THROW(build_graph(far, Matrix::Zero(2, 2), {0, 1}, 0.5, 1), GraphError);
}

TEST(BuildGraph, DeduplicatesEdges) {
  const std::vector<Edge> edges{{0, 1}, {1, 0}, {0, 1}, {1, 2}};
  const Graph g = build_graph(edges, Matrix::Zero(3, 1), {0, 1, 0}, 0.5, 1);
  EXPECT_EQ(g.num_edges(), 2u);
}

TEST(BuildGraph, CoraDimensions) {
  const Graph g = load_dataset(lisa::fixture::cora_dir(), {0.05, 0.0, 1});
  EXPECT_EQ(g.num_nodes(), 2708);
  EXPECT_EQ(g.num_edges(), 5278u);
  EXPECT_EQ(g.adjacency().nonZeros(), 10556);
  EXPECT_EQ(g.num_features(), 1433);
  EXPECT_EQ(g.num_classes(), 7);
  EXPECT_EQ(std::count(g.train_mask().begin(), g.train_mask().end(), true), 136);  // ceil(0.05 N)
}

TEST(GraphInvariants, SymmetricAndLoopFreeOnRandomGraphs) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Graph g = random_graph(12, 3, 3, seed);
    const Matrix a = Matrix(g.adjacency());
    EXPECT_TRUE(a.isApprox(a.transpose()));
    EXPECT_EQ(a.diagonal().sum(), 0.0);
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
      EXPECT_FALSE(g.train_mask()[v] && g.val_mask()[v]);
    }
  }
}

TEST(ComposePoisoned, EmptyPayloadIsHost) {
  const Graph g = path_graph(4);
  const PoisonedGraph gp = compose_poisoned(g, Subgraph::empty(g.num_features()));
  EXPECT_EQ(gp.num_nodes(), 4);
  EXPECT_EQ(gp.num_edges(), g.num_edges());
  EXPECT_TRUE(Matrix(gp.adjacency()).isApprox(Matrix(g.adjacency())));
}

TEST(ComposePoisoned, BlockDiagonalExhaustive) {
  const Graph g = path_graph(3);  // 2 edges
  const std::vector<Edge> pe{{0, 1}};
  const Subgraph payload = Subgraph::from_edges(2, pe, Matrix::Ones(2, 3));
  const PoisonedGraph gp = compose_poisoned(g, payload);
  EXPECT_EQ(gp.num_nodes(), 5);
  EXPECT_EQ(gp.num_edges(), 3u);
  const Matrix a = Matrix(gp.adjacency());
  std::set<std::pair<int, int>> expected{{0, 1}, {1, 0}, {1, 2}, {2, 1}, {3, 4}, {4, 3}};
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      EXPECT_EQ(a(i, j), expected.count({i, j}) ? 1.0 : 0.0) << i << "," << j;
    }
  }
  const Matrix f = gp.dense_features();
  EXPECT_TRUE(f.topRows(3).isApprox(Matrix(g.features())));
  EXPECT_TRUE(f.bottomRows(2).isApprox(Matrix::Ones(2, 3)));
}

TEST(ComposePoisoned, CoraWithFiveNodePayload) {
  const Graph g = load_dataset(lisa::fixture::cora_dir(), {0.05, 0.0, 1});
  const Subgraph payload = random_subgraph(5, 5, g.num_features(), 3);
  const PoisonedGraph gp = compose_poisoned(g, payload);
  EXPECT_EQ(gp.adjacency().rows(), 2713);
  EXPECT_EQ(gp.adjacency().cols(), 2713);
  EXPECT_EQ(gp.num_edges(), 5283u);
  EXPECT_EQ(gp.feature_row(2712).size(), 1433);
  EXPECT_TRUE(gp.feature_row(2710).isApprox(payload.features().row(2)));
}

TEST(ComposePoisoned, RejectsFeatureMismatch) {
  const Graph g = path_graph(3);
  EXPECT_THROW(compose_poisoned(g, random_subgraph(2, 1, 5, 1)), GraphError);
}

TEST(NormalizeAdjacency, IsolatedNode) {
  SparseMatrix a(1, 1);
  const Matrix m = Matrix(normalize_adjacency(a));
  ASSERT_EQ(m.rows(), 1);
  EXPECT_DOUBLE_EQ(m(0, 0), 1.0);
}

TEST(NormalizeAdjacency, SingleEdgeAllHalf) {
  const std::vector<Edge> e{{0, 1}};
  const Matrix m = Matrix(normalize_adjacency(adjacency_from_edges(2, e)));
  EXPECT_TRUE(m.isApprox(Matrix::Constant(2, 2, 0.5)));
}

TEST(NormalizeAdjacency, SymmetricBoundedSameSupport) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Graph g = random_graph(15, 2, 2, seed);
    const Matrix m = Matrix(normalize_adjacency(g.adjacency()));
    const Matrix ai = Matrix(g.adjacency()) + Matrix::Identity(15, 15);
    EXPECT_TRUE(m.isApprox(m.transpose()));
    EXPECT_LE(m.maxCoeff(), 1.0 + 1e-12);
    for (int i = 0; i < 15; ++i) {
      for (int j = 0; j < 15; ++j) EXPECT_EQ(m(i, j) > 0.0, ai(i, j) == 1.0);
    }
  }
}

TEST(NHop, Examples) {
  const Graph g = path_graph(4);
  EXPECT_EQ(n_hop_neighborhood(g, 2, 0), (std::vector<NodeId>{2}));
  EXPECT_EQ(n_hop_neighborhood(g, 0, 2), (std::vector<NodeId>{0, 1, 2}));
  const std::vector<Edge> star{{0, 1}, {0, 2}, {0, 3}, {0, 4}};
  const Graph s = build_graph(star, Matrix::Zero(5, 1), {0, 0, 0, 0, 0}, 0.2, 1);
  EXPECT_EQ(n_hop_neighborhood(s, 0, 1).size(), 5u);
  EXPECT_THROW(n_hop_neighborhood(g, 9, 1), GraphError);
}

TEST(NHop, MonotoneInHops) {
  const Graph g = random_graph(20, 2, 2, 4, 0.05);
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    for (int n = 0; n < 4; ++n) {
      const auto small = n_hop_neighborhood(g, v, n);
      const auto big = n_hop_neighborhood(g, v, n + 1);
      EXPECT_TRUE(std::includes(big.begin(), big.end(), small.begin(), small.end()));
    }
  }
}

TEST(EdgeSplit, CountingRule) {
  const Graph g = path_graph(11);  // 10 edges
  const EdgeSplit s = edge_split(g, 0.85, 0.5, 7);
  EXPECT_EQ(s.train_edges.size(), 9u);
  EXPECT_GE(s.positive_labels.size(), 4u);
  EXPECT_LE(s.positive_labels.size(), 5u);
  EXPECT_EQ(s.held_out.size(), 1u);
}

TEST(EdgeSplit, PartitionAndDeterminism) {
  const Graph g = random_graph(30, 2, 2, 5);
  const EdgeSplit a = edge_split(g, 0.85, 0.5, 11);
  const EdgeSplit b = edge_split(g, 0.85, 0.5, 11);
  EXPECT_EQ(a.train_edges, b.train_edges);
  EXPECT_EQ(a.positive_labels, b.positive_labels);
  std::vector<Edge> all = a.train_edges;
  all.insert(all.end(), a.held_out.begin(), a.held_out.end());
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, std::vector<Edge>(g.edges().begin(), g.edges().end()));
  std::set<Edge> train(a.train_edges.begin(), a.train_edges.end());
  for (const Edge& e : a.positive_labels) EXPECT_TRUE(train.count(e));
  for (const Edge& e : a.held_out) EXPECT_FALSE(train.count(e));
}

TEST(EdgeSplit, FullFractions) {
  const Graph g = path_graph(6);
  const EdgeSplit s = edge_split(g, 1.0, 1.0, 1);
  EXPECT_EQ(s.positive_labels.size(), g.num_edges());
}

TEST(NegativeSampling, OnlyNonEdges) {
  const Graph g = random_graph(10, 2, 2, 3);
  const PoisonedGraph gp = compose_poisoned(g, Subgraph::empty(2));
  const std::vector<Edge> pos(g.edges().begin(), g.edges().begin() + 3);
  const auto neg = sample_negative_edges(gp, 1, pos, std::uint64_t{9});
  ASSERT_EQ(neg.size(), 3u);
  for (const Edge& e : neg) {
    EXPECT_NE(e.u, e.v);
    EXPECT_FALSE(gp.has_edge(e.u, e.v));
  }
  EXPECT_EQ(neg, sample_negative_edges(gp, 1, pos, std::uint64_t{9}));
}

TEST(NegativeSampling, SingleNonEdgeIsForced) {
  const std::vector<Edge> edges{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}};
  const Graph g = build_graph(edges, Matrix::Zero(4, 1), {0, 0, 0, 0}, 0.5, 1);
  const PoisonedGraph gp = compose_poisoned(g, Subgraph::empty(1));
  const std::vector<Edge> pos{{0, 1}};
  const auto neg = sample_negative_edges(gp, 1, pos, std::uint64_t{5});
  ASSERT_EQ(neg.size(), 1u);
  EXPECT_EQ(neg[0], (Edge{2, 3}));
}

TEST(NegativeSampling, CompleteGraphRejected) {
  const std::vector<Edge> edges{{0, 1}, {0, 2}, {1, 2}};
  const Graph g = build_graph(edges, Matrix::Zero(3, 1), {0, 0, 0}, 0.5, 1);
  const PoisonedGraph gp = compose_poisoned(g, Subgraph::empty(1));
  const std::vector<Edge> pos{{0, 1}};
  EXPECT_THROW(sample_negative_edges(gp, 1, pos, std::uint64_t{5}), GraphError);
}

TEST(Subgraph, SwapKeepsBudget) {
  Subgraph s = random_subgraph(5, 4, 2, 8);
  const auto before = s.edges();
  const Edge removed = before.front();
  Edge added{0, 0};
  for (NodeId i = 0; i < 5 && added.u == added.v; ++i)
    for (NodeId j = i + 1; j < 5; ++j)
      if (!s.has_edge(i, j)) {
        added = {i, j};
        break;
      }
  s.swap_edge(removed, added);
  EXPECT_EQ(s.num_edges(), 4u);
  EXPECT_TRUE(s.valid());
  EXPECT_TRUE(s.has_edge(added.u, added.v));
  EXPECT_FALSE(s.has_edge(removed.u, removed.v));
}

TEST(FeatureBox, ProjectClipsPerDimension) {
  const Graph g = random_graph(8, 3, 2, 2);
  Matrix rows = Matrix::Constant(2, 3, 5.0);
  rows(1, 0) = -5.0;
  EXPECT_FALSE(g.feature_box().contains(rows));
  g.feature_box().project(rows);
  EXPECT_TRUE(g.feature_box().contains(rows));
  EXPECT_DOUBLE_EQ(rows(0, 1), g.feature_box().upper[1]);
  EXPECT_DOUBLE_EQ(rows(1, 0), g.feature_box().lower[0]);
}

TEST(RowNormalized, UnitRowSumsAndZeroRowsKept) {
  const std::vector<Edge> edges{{0, 1}, {1, 2}};
  Matrix f(3, 3);
  f << 1, 1, 0, 0, 0, 0, 2, 1, 1;
  const Graph g = row_normalized(build_graph(edges, f, {0, 1, 0}, 0.5, 1));
  const Matrix n = Matrix(g.features());
  EXPECT_DOUBLE_EQ(n.row(0).sum(), 1.0);
  EXPECT_DOUBLE_EQ(n.row(1).sum(), 0.0);
  EXPECT_DOUBLE_EQ(n(2, 0), 0.5);
  EXPECT_DOUBLE_EQ(g.feature_box().upper[0], 0.5);
  EXPECT_EQ(g.num_edges(), 2u);
}
