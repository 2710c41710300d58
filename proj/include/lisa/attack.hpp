#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lisa/graph.hpp"
#include "lisa/models.hpp"

namespace lisa {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AblationVariant { full, wo_cls, wo_link, wo_str, wo_feat };

AblationVariant parse_variant(std::string_view tag);
std::string to_string(AblationVariant v);

struct AttackConfig {
  int n_V = 5;
  int n_E = 5;
  double alpha = 1.0;
  double beta = 1.0;
  double lr_feat = 1.0;
  int inner_steps = 5;
  int outer_epochs = 200;
  int swaps_per_step = 1;
  int k = 3;
  int Q = 1;

  LinkArch surrogate_link = LinkArch::gae;
  double surrogate_lr = 0.01;
  double weight_decay = 5e-4;
  double dropout = 0.5;
  /// Stop when |L_e - L_{e-w}| / |L_{e-w}| < tol for window w.
  double convergence_tol = 1e-5;
  int convergence_window = 10;

  AblationVariant variant = AblationVariant::full;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
};

struct AttackLabel {
  NodeId target = 0;
  int y_atk = 0;
};

/// Second-largest entry; the top entry is chosen with the lowest-index
/// tie-break and the runner-up the same way among the rest.
int second_class(const RowVector& logits);
AttackLabel attack_label(const Matrix& clean_logits, NodeId target);
AttackLabel attack_label(const ClassifierParams& clean_classifier, const Graph& g, NodeId target);

/// Everything an attack on one dataset shares across targets.
struct AttackContext {
  const Graph* graph = nullptr;
  EdgeSplit split;
  std::vector<NodeId> label_nodes;
  ClassifierParams clean_classifier;
  Prediction clean_prediction;
};

/// Draws the edge split and pretrains the clean classifier used for attack labels.
AttackContext make_attack_context(const Graph& g, std::uint64_t seed, double edge_train_frac = 0.85,
                                  double edge_label_frac = 0.5, int pretrain_steps = 200,
                                  ClassifierArch arch = ClassifierArch::gcn);

/// One evaluation of the attack loss. The payload features and payload block
/// of both graphs must agree; both are differentiated.
struct AttackLossInputs {
  const ModelGraph* link_graph = nullptr;  // G_p over the message edges, payload block separate
  const ModelGraph* cls_graph = nullptr;   // G_r, payload block separate
  const LinkPredictorParams* phi = nullptr;  // null drops the link term
  const ClassifierParams* theta = nullptr;   // null drops the cls term
  AttackLabel label;
  std::span<const Edge> candidate_pairs;  // positives for the link term
  std::span<const Edge> negatives;
  double alpha = 1.0;
  bool track_branches = false;
};

struct AttackLossResult {
  double total = 0.0;
  double cls_term = 0.0;
  double link_term = 0.0;
  Matrix grad_features;    // d total / d F_s
  Matrix link_adjacency;   // d link_term / d A_s, raw (unsymmetrized)
  Matrix cls_adjacency;    // d cls_term / d A_s, raw
  Matrix link_embedding;   // surrogate z (evaluation mode) over the link graph
  std::uint64_t branch = 0;
};

AttackLossResult attack_loss(const AttackLossInputs& in);

/// F_s <- project(F_s - lr * grad).
void feature_step(Subgraph& payload, const Matrix& grad, double lr, const FeatureBox& box);

struct StructureOutcome {
  int swaps = 0;
  std::string note;  // why the step stopped early, if it did
};

/// One or more add/remove swaps ranked by link_grad + beta * cls_grad.
/// Gradients must be symmetric n_V x n_V.
StructureOutcome structure_step(Subgraph& payload, const Matrix& link_grad, const Matrix& cls_grad,
                                double beta, int swaps);

struct TraceRecord {
  int epoch = 0;
  std::string phase;    // "structure" | "feature"
  bool applied = true;  // false when the variant disables this phase
  int swaps = 0;
  double cls_term = 0.0;
  double link_term = 0.0;
  double total = 0.0;
};

struct LisaResult {
  Subgraph payload;
  AttackLabel label;
  std::vector<TraceRecord> trace;
  int epochs_run = 0;
  bool converged = false;
  bool failed = false;
  std::string failure;
};

/// Random payload: n_V feature rows drawn without replacement from F_o and
/// n_E distinct random pairs.
Subgraph random_payload(const Graph& g, int n_V, int n_E, Rng& rng);

/// Alternating structure/feature attack against a single target.
LisaResult run_lisa(const AttackContext& ctx, NodeId target, const AttackConfig& config);

/// Cross links from the target to its payload nodes, top-min(k, n_V) by score.
std::vector<Edge> training_links(const Matrix& z, NodeId target, NodeId num_host, int n_V, int k);

/// One JSON object per line.
void write_trace(const std::filesystem::path& file, std::span<const TraceRecord> trace);

}  // namespace lisa
