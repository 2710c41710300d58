#pragma once

#include <vector>

#include "lisa/attack.hpp"
#include "lisa/graph.hpp"

namespace lisa {

struct GraphCopyResult {
  Subgraph payload;
  NodeId anchor = 0;                // payload index of the target's twin
  std::vector<NodeId> source_nodes;  // host id copied into payload index i
};

/// Induced copy of the `hops`-hop neighborhood of `target`. Each copied
/// feature gets Gaussian noise with standard deviation noise_frac times the
/// per-dimension standard deviation of F_o.
GraphCopyResult graph_copy(const Graph& g, NodeId target, int hops, double noise_frac,
                           std::uint64_t seed);

struct NiaConfig {
  double lsr = 1.0;
  int feature_steps = 200;
  double feature_lr = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct NiaAggressor {
  NodeId target = 0;
  AttackLabel label;
  RowVector features;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// Optimizes one aggressor's features by projected gradient descent on the
/// attack-label cross-entropy of the clean surrogate classifier, with the
/// target-aggressor link assumed present. Initialized from a random host row.
NiaAggressor nia_optimize(const AttackContext& ctx, NodeId target, const NiaConfig& config);

/// Seeded Bernoulli(lsr) draw. The same uniform variate is used for every lsr,
/// so a link formed at some lsr is also formed at every larger one.
bool nia_link_formed(double lsr, std::uint64_t seed, NodeId target);

struct NiaResult {
  NiaAggressor aggressor;
  Subgraph payload;  // the single aggressor, no internal edges
  bool link_formed = false;
  std::vector<Edge> links;  // {target, N_o} when formed
};

NiaResult nia_attack(const AttackContext& ctx, NodeId target, const NiaConfig& config);
NiaResult nia_materialize(const Graph& g, const NiaAggressor& aggressor, double lsr,
                          std::uint64_t seed);

}  // namespace lisa
