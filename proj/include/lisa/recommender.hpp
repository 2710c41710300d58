#pragma once

#include <vector>

#include "lisa/graph.hpp"
#include "lisa/models.hpp"

namespace lisa {

struct Candidate {
  NodeId node = 0;
  double score = 0.0;
};

struct Recommendation {
  NodeId target = 0;
  std::vector<Candidate> proposed;   // score descending, lower id first on ties
  std::vector<Edge> accepted_links;  // the modeled user accepts every proposal
  bool link_success = false;         // some accepted link lands in the payload
  bool short_pool = false;           // fewer than k candidates were available
};

/// Scores of every node that is neither the target nor one of its neighbors
/// in `g`, from precomputed embeddings over g's node ids.
std::vector<Candidate> link_scores(const PoisonedGraph& g, const Matrix& z, NodeId target);

/// Encodes `message_graph` with `predictor` (evaluation mode) and scores.
std::vector<Candidate> link_scores(const PoisonedGraph& g, const ModelGraph& message_graph,
                                   const LinkPredictorParams& predictor, NodeId target);

/// Top-k by score with the lower id winning ties.
Recommendation recommend_top_k(NodeId target, std::vector<Candidate> scores, int k,
                               NodeId num_host);

/// G_r: the poisoned graph with the accepted links that reach the payload.
/// Accepted host-host links are not materialized, so the host block is never
/// modified.
PoisonedGraph apply_recommendation(const PoisonedGraph& g_p, const Recommendation& rec);

}  // namespace lisa
