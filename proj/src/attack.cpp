#include "lisa/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "lisa/seed.hpp"

namespace lisa {

AblationVariant parse_variant(std::string_view tag) {
  if (tag == "full") return AblationVariant::full;
  if (tag == "wo_cls") return AblationVariant::wo_cls;
  if (tag == "wo_link") return AblationVariant::wo_link;
  if (tag == "wo_str") return AblationVariant::wo_str;
  if (tag == "wo_feat") return AblationVariant::wo_feat;
  throw ConfigError("unknown variant '" + std::string(tag) +
                    "' (expected full|wo_cls|wo_link|wo_str|wo_feat)");
}

std::string to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::full:
      return "full";
    case AblationVariant::wo_cls:
      return "wo_cls";
    case AblationVariant::wo_link:
      return "wo_link";
    case AblationVariant::wo_str:
      return "wo_str";
    case AblationVariant::wo_feat:
      return "wo_feat";
  }
  return "?";
}

void AttackConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (n_V < 1) fail("subgraph nodes must be >= 1");
  if (n_E < 0) fail("subgraph edges must be >= 0");
  if (static_cast<long long>(n_E) > static_cast<long long>(n_V) * (n_V - 1) / 2) {
    fail("subgraph edges (" + std::to_string(n_E) + ") exceed n_V(n_V-1)/2 = " +
         std::to_string(n_V * (n_V - 1) / 2));
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail("alpha must be >= 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) fail("beta must be >= 0");
  if (!(lr_feat > 0.0)) fail("lr_feat must be > 0");
  if (inner_steps < 0) fail("inner steps must be >= 0");
  if (outer_epochs < 0) fail("outer epochs must be >= 0");
  if (swaps_per_step < 1) fail("swaps per step must be >= 1");
  if (k < 1) fail("k must be >= 1");
  if (Q < 1) fail("Q must be >= 1");
  if (!(surrogate_lr > 0.0)) fail("surrogate learning rate must be > 0");
  if (weight_decay < 0.0) fail("weight decay must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (convergence_window < 1) fail("convergence window must be >= 1");
}

int second_class(const RowVector& logits) {
  if (logits.size() < 2) {
    throw ConfigError("attack label needs at least two classes");
  }
  const int top = argmax(logits);
  int second = top == 0 ? 1 : 0;
  for (Eigen::Index c = 0; c < logits.size(); ++c) {
    if (c != top && logits[c] > logits[second]) {
      second = static_cast<int>(c);
    }
  }
  return second;
}

AttackLabel attack_label(const Matrix& clean_logits, NodeId target) {
  if (target < 0 || target >= clean_logits.rows()) {
    throw GraphError("target out of range: " + std::to_string(target));
  }
  return {target, second_class(clean_logits.row(target))};
}

AttackLabel attack_label(const ClassifierParams& clean_classifier, const Graph& g, NodeId target) {
  return attack_label(classify(model_graph(g), clean_classifier).logits, target);
}

AttackContext make_attack_context(const Graph& g, std::uint64_t seed, double edge_train_frac,
                                  double edge_label_frac, int pretrain_steps,
                                  ClassifierArch arch) {
  AttackContext ctx;
  ctx.graph = &g;
  ctx.split = edge_split(g, edge_train_frac, edge_label_frac, derive_seed(seed, {stream::split}));
  ctx.label_nodes = g.train_nodes();
  Rng init(derive_seed(seed, {stream::pretrain, 0}));
  ClassifierTrainer trainer(init_classifier(arch, g.num_features(), g.num_classes(), init),
                            AdamOptions{.lr = 0.01, .weight_decay = 5e-4},
                            derive_seed(seed, {stream::pretrain, 1}));
  const ModelGraph view = model_graph(g);
  for (int s = 0; s < pretrain_steps; ++s) {
    trainer.step(view, ctx.label_nodes, g.labels());
  }
  ctx.clean_classifier = trainer.params();
  ctx.clean_prediction = classify(view, ctx.clean_classifier);
  return ctx;
}

AttackLossResult attack_loss(const AttackLossInputs& in) {
  AttackLossResult out;
  std::uint64_t branch = 0;
  const ModelGraph* any = in.link_graph != nullptr ? in.link_graph : in.cls_graph;
  if (any == nullptr) {
    throw ConfigError("attack_loss needs at least one graph");
  }
  const Eigen::Index n = any->num_payload();
  out.grad_features = Matrix::Zero(n, any->feature_dim());
  out.link_adjacency = Matrix::Zero(n, n);
  out.cls_adjacency = Matrix::Zero(n, n);

  if (in.phi != nullptr) {
    ad::Tape tape;
    tape.set_track_branches(in.track_branches);
    const TapeGraph tg = bind_graph(tape, *in.link_graph, true, true);
    const auto w = bind_params(tape, in.phi->weights, false);
    const Encoding enc = link_encoder_forward(tape, tg, *in.phi, w);
    const ad::Var loss = tape.recon_loss(enc.z, in.candidate_pairs, in.negatives);
    out.link_term = tape.scalar(loss);
    out.link_embedding = tape.value(enc.z);
    const auto grads = tape.backward(loss);
    out.grad_features += in.alpha * grads.of(tg.payload_features);
    if (tg.payload_block.valid()) {
      out.link_adjacency = grads.of(tg.payload_block);
    }
    branch = tape.branch_signature();
  }
  if (in.theta != nullptr) {
    ad::Tape tape;
    tape.set_track_branches(in.track_branches);
    const TapeGraph tg = bind_graph(tape, *in.cls_graph, true, true);
    const auto w = bind_params(tape, in.theta->weights, false);
    const ad::Var logits = classifier_forward(tape, tg, *in.theta, w);
    const NodeId rows[] = {in.label.target};
    const int labels[] = {in.label.y_atk};
    const ad::Var loss = tape.softmax_cross_entropy(logits, rows, labels);
    out.cls_term = tape.scalar(loss);
    const auto grads = tape.backward(loss);
    out.grad_features += grads.of(tg.payload_features);
    if (tg.payload_block.valid()) {
      out.cls_adjacency = grads.of(tg.payload_block);
    }
    branch = splitmix64(branch ^ tape.branch_signature());
  }
  out.total = out.cls_term + in.alpha * out.link_term;
  out.branch = branch;
  if (!std::isfinite(out.total) || !out.grad_features.allFinite() ||
      !out.link_adjacency.allFinite() || !out.cls_adjacency.allFinite()) {
    throw NonFiniteLoss("attack loss or its gradient is not finite (cls=" +
                        std::to_string(out.cls_term) + ", link=" + std::to_string(out.link_term) +
                        ")");
  }
  return out;
}

void feature_step(Subgraph& payload, const Matrix& grad, double lr, const FeatureBox& box) {
  if (grad.rows() != payload.num_nodes() || grad.cols() != payload.feature_dim()) {
    throw GraphError("feature gradient shape does not match the payload");
  }
  Matrix f = payload.features() - lr * grad;
  box.project(f);
  payload.set_features(std::move(f));
}

StructureOutcome structure_step(Subgraph& payload, const Matrix& link_grad, const Matrix& cls_grad,
                                double beta, int swaps) {
  const NodeId n = payload.num_nodes();
  if (link_grad.rows() != n || link_grad.cols() != n || cls_grad.rows() != n ||
      cls_grad.cols() != n) {
    throw GraphError("structure gradients must be n_V x n_V");
  }
  const Matrix combined = link_grad + beta * cls_grad;
  StructureOutcome out;
  std::vector<Edge> touched;
  const auto was_touched = [&](Edge e) {
    return std::find(touched.begin(), touched.end(), e) != touched.end();
  };
  for (int s = 0; s < swaps; ++s) {
    std::optional<Edge> add;
    std::optional<Edge> remove;
    for (NodeId i = 0; i < n; ++i) {
      for (NodeId j = i + 1; j < n; ++j) {
        const Edge e{i, j};
        if (was_touched(e)) {
          continue;
        }
        const double g = combined(i, j);
        if (payload.has_edge(i, j)) {
          if (!remove || g > combined(remove->u, remove->v)) {
            remove = e;
          }
        } else if (!add || g < combined(add->u, add->v)) {
          add = e;
        }
      }
    }
    if (!add) {
      out.note = "no absent position to add";
      break;
    }
    if (!remove) {
      out.note = "no present edge to remove";
      break;
    }
    if (combined(add->u, add->v) >= combined(remove->u, remove->v)) {
      out.note = "no swap decreases the first-order estimate";
      break;
    }
    payload.swap_edge(*remove, *add);
    touched.push_back(*remove);
    touched.push_back(*add);
    ++out.swaps;
  }
  return out;
}

Subgraph random_payload(const Graph& g, int n_V, int n_E, Rng& rng) {
  if (n_V > g.num_nodes()) {
    throw ConfigError("payload larger than the host graph");
  }
  std::vector<NodeId> ids(static_cast<std::size_t>(g.num_nodes()));
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  Matrix features(n_V, g.num_features());
  for (int i = 0; i < n_V; ++i) {
    features.row(i) = g.feature_row(ids[static_cast<std::size_t>(i)]);
  }
  std::vector<Edge> pairs;
  for (NodeId i = 0; i < n_V; ++i) {
    for (NodeId j = i + 1; j < n_V; ++j) {
      pairs.push_back({i, j});
    }
  }
  if (static_cast<std::size_t>(n_E) > pairs.size()) {
    throw ConfigError("edge budget exceeds the number of node pairs");
  }
  std::shuffle(pairs.begin(), pairs.end(), rng);
  pairs.resize(static_cast<std::size_t>(n_E));
  return Subgraph::from_edges(n_V, pairs, std::move(features));
}

std::vector<Edge> training_links(const Matrix& z, NodeId target, NodeId num_host, int n_V, int k) {
  std::vector<std::pair<double, NodeId>> ranked;
  for (NodeId i = 0; i < n_V; ++i) {
    ranked.emplace_back(z.row(target).dot(z.row(num_host + i)), i);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<Edge> links;
  for (int r = 0; r < std::min(k, n_V); ++r) {
    links.push_back(make_edge(target, num_host + ranked[static_cast<std::size_t>(r)].second));
  }
  std::sort(links.begin(), links.end());
  return links;
}

namespace {

std::vector<Edge> fixed_links(NodeId target, NodeId num_host, int n_V, int k) {
  std::vector<Edge> links;
  for (int i = 0; i < std::min(k, n_V); ++i) {
    links.push_back(make_edge(target, num_host + i));
  }
  return links;
}

}  // namespace

LisaResult run_lisa(const AttackContext& ctx, NodeId target, const AttackConfig& config) {
  config.validate();
  const Graph& g = *ctx.graph;
  if (target < 0 || target >= g.num_nodes()) {
    throw GraphError("target out of range: " + std::to_string(target));
  }
  const auto t = static_cast<std::uint64_t>(target);
  const std::uint64_t seed = config.seed;
  const NodeId n_host = g.num_nodes();

  LisaResult result;
  result.label = attack_label(ctx.clean_prediction.logits, target);
  Rng init_rng(derive_seed(seed, {stream::payload_init, t}));
  result.payload = random_payload(g, config.n_V, config.n_E, init_rng);

  const bool use_link = config.variant != AblationVariant::wo_link;
  const bool use_cls = config.variant != AblationVariant::wo_cls;
  const bool do_str = config.variant != AblationVariant::wo_str;
  const bool do_feat = config.variant != AblationVariant::wo_feat;

  Rng model_rng(derive_seed(seed, {stream::surrogate_link, t, 0}));
  std::optional<LinkPredictorTrainer> predictor;
  if (use_link) {
    predictor.emplace(init_link_predictor(config.surrogate_link, g.num_features(), model_rng),
                      AdamOptions{.lr = config.surrogate_lr},
                      derive_seed(seed, {stream::surrogate_link, t, 1}), config.Q);
  }
  Rng cls_rng(derive_seed(seed, {stream::surrogate_cls, t, 0}));
  ClassifierTrainer classifier(
      init_classifier(ClassifierArch::gcn, g.num_features(), g.num_classes(), cls_rng),
      AdamOptions{.lr = config.surrogate_lr, .weight_decay = config.weight_decay},
      derive_seed(seed, {stream::surrogate_cls, t, 1}), config.dropout);

  std::vector<Edge> candidates;
  for (int i = 0; i < config.n_V; ++i) {
    candidates.push_back({target, n_host + i});
  }
  Rng neg_rng(derive_seed(seed, {stream::attack_negatives, t}));

  std::vector<Edge> links;
  if (use_link) {
    const PoisonedGraph gp(g, result.payload);
    const ModelGraph lg = model_graph(gp, ctx.split.train_edges, PayloadBlock::separate);
    links = training_links(encode_links(lg, predictor->params()).z, target, n_host, config.n_V,
                           config.k);
  } else {
    links = fixed_links(target, n_host, config.n_V, config.k);
  }

  std::vector<double> totals;
  for (int epoch = 0; epoch < config.outer_epochs; ++epoch) {
    try {
      const PoisonedGraph gp(g, result.payload);
      const ModelGraph link_graph = model_graph(gp, ctx.split.train_edges, PayloadBlock::separate);
      ModelGraph cls_graph =
          model_graph(PoisonedGraph(g, result.payload, links), PayloadBlock::separate);

      InnerData data;
      data.link_graph = &link_graph;
      data.sampling_graph = &gp;
      data.positives = ctx.split.positive_labels;
      data.cls_graph = &cls_graph;
      data.label_nodes = ctx.label_nodes;
      data.labels = g.labels();
      train_inner(use_cls ? &classifier : nullptr, predictor ? &*predictor : nullptr, data,
                  config.inner_steps);

      std::vector<Edge> negatives;
      AttackLossInputs in;
      in.link_graph = &link_graph;
      in.cls_graph = &cls_graph;
      in.label = result.label;
      in.alpha = config.alpha;
      if (use_link) {
        in.phi = &predictor->params();
        const std::vector<Edge> fresh = training_links(
            encode_links(link_graph, predictor->params()).z, target, n_host, config.n_V, config.k);
        if (fresh != links) {
          links = fresh;
          cls_graph = model_graph(PoisonedGraph(g, result.payload, links), PayloadBlock::separate);
        }
        negatives = sample_negative_edges(gp, config.Q, candidates, neg_rng);
        in.candidate_pairs = candidates;
        in.negatives = negatives;
      }
      if (use_cls) {
        in.theta = &classifier.params();
      }
      const AttackLossResult loss = attack_loss(in);

      TraceRecord rec;
      rec.epoch = epoch;
      rec.cls_term = loss.cls_term;
      rec.link_term = loss.link_term;
      rec.total = loss.total;
      if (epoch % 2 == 0) {
        rec.phase = "structure";
        rec.applied = do_str;
        if (do_str) {
          const StructureOutcome step =
              structure_step(result.payload, ad::symmetrize(loss.link_adjacency),
                             ad::symmetrize(loss.cls_adjacency), config.beta,
                             config.swaps_per_step);
          rec.swaps = step.swaps;
          if (!step.note.empty()) {
            spdlog::debug("target {} epoch {}: structure step skipped ({})", target, epoch,
                          step.note);
          }
        }
      } else {
        rec.phase = "feature";
        rec.applied = do_feat;
        if (do_feat) {
          feature_step(result.payload, loss.grad_features, config.lr_feat, g.feature_box());
        }
      }
      result.trace.push_back(rec);
      result.epochs_run = epoch + 1;

      totals.push_back(loss.total);
      const auto w = static_cast<std::size_t>(config.convergence_window);
      if (totals.size() > w) {
        const double then = totals[totals.size() - 1 - w];
        const double change = std::abs(loss.total - then) / std::max(std::abs(then), 1e-12);
        if (change < config.convergence_tol) {
          result.converged = true;
          break;
        }
      }
    } catch (const std::exception& e) {
      result.failed = true;
      result.failure = "epoch " + std::to_string(epoch) + ": " + e.what();
      spdlog::warn("target {}: attack aborted at {}", target, result.failure);
      break;
    }
  }
  return result;
}

void write_trace(const std::filesystem::path& file, std::span<const TraceRecord> trace) {
  std::ofstream out(file);
  if (!out) {
    throw std::runtime_error("cannot write " + file.string());
  }
  for (const TraceRecord& r : trace) {
    nlohmann::json j{{"epoch", r.epoch},         {"phase", r.phase},
                     {"applied", r.applied},     {"swaps", r.swaps},
                     {"cls_term", r.cls_term},   {"link_term", r.link_term},
                     {"total", r.total}};
    out << j.dump() << "\n";
  }
}

}  // namespace lisa
