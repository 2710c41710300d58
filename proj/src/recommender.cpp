#include "lisa/recommender.hpp"

#include <algorithm>

namespace lisa {

std::vector<Candidate> link_scores(const PoisonedGraph& g, const Matrix& z, NodeId target) {
  if (target < 0 || target >= g.num_host()) {
    throw GraphError("target " + std::to_string(target) + " is not a host node");
  }
  if (z.rows() != g.num_nodes()) {
    throw GraphError("embedding rows do not match the poisoned graph");
  }
  const std::vector<NodeId> nbrs = g.neighbors(target);
  std::vector<Candidate> out;
  out.reserve(static_cast<std::size_t>(g.num_nodes()));
  const RowVector zt = z.row(target);
  auto nb = nbrs.begin();
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    while (nb != nbrs.end() && *nb < v) {
      ++nb;
    }
    if (v == target || (nb != nbrs.end() && *nb == v)) {
      continue;
    }
    out.push_back({v, sigmoid(zt.dot(z.row(v)))});
  }
  return out;
}

std::vector<Candidate> link_scores(const PoisonedGraph& g, const ModelGraph& message_graph,
                                   const LinkPredictorParams& predictor, NodeId target) {
  return link_scores(g, encode_links(message_graph, predictor).z, target);
}

Recommendation recommend_top_k(NodeId target, std::vector<Candidate> scores, int k,
                               NodeId num_host) {
  if (k < 1) {
    throw GraphError("k must be at least 1");
  }
  Recommendation rec;
  rec.target = target;
  const auto order = [](const Candidate& a, const Candidate& b) {
    return a.score != b.score ? a.score > b.score : a.node < b.node;
  };
  const std::size_t take = std::min(scores.size(), static_cast<std::size_t>(k));
  rec.short_pool = take < static_cast<std::size_t>(k);
  std::partial_sort(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(take),
                    scores.end(), order);
  rec.proposed.assign(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(take));
  for (const Candidate& c : rec.proposed) {
    rec.accepted_links.push_back(make_edge(target, c.node));
    rec.link_success = rec.link_success || c.node >= num_host;
  }
  return rec;
}

PoisonedGraph apply_recommendation(const PoisonedGraph& g_p, const Recommendation& rec) {
  std::vector<Edge> links(g_p.cross_links().begin(), g_p.cross_links().end());
  for (const Edge& e : rec.accepted_links) {
    if (e.u != rec.target && e.v != rec.target) {
      throw GraphError("accepted link does not touch the target");
    }
    if (g_p.has_edge(e.u, e.v)) {
      throw GraphError("accepted link (" + std::to_string(e.u) + ", " + std::to_string(e.v) +
                       ") duplicates an existing edge");
    }
    if (g_p.is_payload(e.u) != g_p.is_payload(e.v)) {
      links.push_back(e);
    }
  }
  std::sort(links.begin(), links.end());
  return PoisonedGraph(g_p.host(), g_p.payload(), std::move(links));
}

}  // namespace lisa
