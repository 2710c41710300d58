#include "lisa/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "lisa/seed.hpp"

namespace lisa {

GraphCopyResult graph_copy(const Graph& g, NodeId target, int hops, double noise_frac,
                           std::uint64_t seed) {
  if (hops < 0) {
    throw ConfigError("hops must be >= 0");
  }
  if (!(noise_frac >= 0.0)) {
    throw ConfigError("noise fraction must be >= 0");
  }
  GraphCopyResult out;
  out.source_nodes = n_hop_neighborhood(g, target, hops);
  const auto& nodes = out.source_nodes;
  const auto n = static_cast<NodeId>(nodes.size());
  const auto local = [&](NodeId v) -> NodeId {
    const auto it = std::lower_bound(nodes.begin(), nodes.end(), v);
    return it != nodes.end() && *it == v ? static_cast<NodeId>(it - nodes.begin()) : -1;
  };
  out.anchor = local(target);

  std::vector<Edge> edges;
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId u : g.neighbors(nodes[static_cast<std::size_t>(i)])) {
      const NodeId j = local(u);
      if (j > i) {
        edges.push_back({i, j});
      }
    }
  }

  Matrix features(n, g.num_features());
  for (NodeId i = 0; i < n; ++i) {
    features.row(i) = g.feature_row(nodes[static_cast<std::size_t>(i)]);
  }
  if (noise_frac > 0.0) {
    const RowVector scale = noise_frac * g.feature_stddev();
    Rng rng(derive_seed(seed, {stream::graph_copy, static_cast<std::uint64_t>(target)}));
    std::normal_distribution<double> normal;
    for (Eigen::Index r = 0; r < features.rows(); ++r) {
      for (Eigen::Index c = 0; c < features.cols(); ++c) {
        features(r, c) += scale[c] * normal(rng);
      }
    }
  }
  out.payload = Subgraph::from_edges(n, edges, std::move(features));
  return out;
}

void NiaConfig::validate() const {
  if (!(lsr >= 0.0 && lsr <= 1.0)) {
    throw ConfigError("lsr must be in [0, 1]");
  }
  if (feature_steps < 0) {
    throw ConfigError("NIA feature steps must be >= 0");
  }
  if (!(feature_lr > 0.0)) {
    throw ConfigError("NIA feature learning rate must be > 0");
  }
}

NiaAggressor nia_optimize(const AttackContext& ctx, NodeId target, const NiaConfig& config) {
  config.validate();
  const Graph& g = *ctx.graph;
  NiaAggressor out;
  out.target = target;
  out.label = attack_label(ctx.clean_prediction.logits, target);

  Rng rng(derive_seed(config.seed, {stream::nia, static_cast<std::uint64_t>(target)}));
  std::uniform_int_distribution<NodeId> pick(0, g.num_nodes() - 1);
  Matrix features = g.feature_row(pick(rng));

  const std::vector<Edge> link{{target, g.num_nodes()}};
  ModelGraph view = model_graph(
      PoisonedGraph(g, Subgraph(Matrix::Zero(1, 1), features), link), PayloadBlock::merged);
  const NodeId rows[] = {target};
  const int labels[] = {out.label.y_atk};
  const auto loss_and_grad = [&](const Matrix& f, Matrix* grad) {
    view.payload_features = f;
    ad::Tape tape;
    const TapeGraph tg = bind_graph(tape, view, grad != nullptr, false);
    const auto w = bind_params(tape, ctx.clean_classifier.weights, false);
    const ad::Var logits = classifier_forward(tape, tg, ctx.clean_classifier, w);
    const ad::Var loss = tape.softmax_cross_entropy(logits, rows, labels);
    if (grad != nullptr) {
      *grad = tape.backward(loss).of(tg.payload_features);
    }
    return tape.scalar(loss);
  };

  Matrix grad;
  for (int s = 0; s < config.feature_steps; ++s) {
    const double loss = loss_and_grad(features, &grad);
    if (s == 0) {
      out.initial_loss = loss;
    }
    features -= config.feature_lr * grad;
    g.feature_box().project(features);
  }
  out.final_loss = loss_and_grad(features, nullptr);
  if (config.feature_steps == 0) {
    out.initial_loss = out.final_loss;
  }
  out.features = features.row(0);
  return out;
}

bool nia_link_formed(double lsr, std::uint64_t seed, NodeId target) {
  Rng rng(derive_seed(seed, {stream::nia_draw, static_cast<std::uint64_t>(target)}));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng) < lsr;
}

NiaResult nia_materialize(const Graph& g, const NiaAggressor& aggressor, double lsr,
                          std::uint64_t seed) {
  NiaResult out;
  out.aggressor = aggressor;
  out.payload = Subgraph(Matrix::Zero(1, 1), Matrix(aggressor.features));
  out.link_formed = nia_link_formed(lsr, seed, aggressor.target);
  if (out.link_formed) {
    out.links.push_back({aggressor.target, g.num_nodes()});
  }
  return out;
}

NiaResult nia_attack(const AttackContext& ctx, NodeId target, const NiaConfig& config) {
  return nia_materialize(*ctx.graph, nia_optimize(ctx, target, config), config.lsr, config.seed);
}

}  // namespace lisa
