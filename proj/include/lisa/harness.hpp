#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lisa/attack.hpp"
#include "lisa/baselines.hpp"
#include "lisa/graph.hpp"
#include "lisa/models.hpp"
#include "lisa/recommender.hpp"

namespace lisa {

enum class AttackKind { lisa, graphcopy, nia, none };

AttackKind parse_attack_kind(std::string_view tag);
std::string to_string(AttackKind kind);

struct ExperimentConfig {
  std::filesystem::path dataset;
  LinkArch recommender = LinkArch::gae;
  ClassifierArch classifier = ClassifierArch::gcn;
  AttackKind attack = AttackKind::lisa;
  int num_targets = 100;
  int k = 3;
  std::uint64_t seed = 0;
  std::filesystem::path out;

  AttackConfig lisa;  // lisa.k and lisa.seed are overwritten from k and seed
  NiaConfig nia;      // nia.seed is overwritten from seed
  int copy_hops = 2;
  double copy_noise = 0.1;

  double label_frac = 0.05;
  double edge_train_frac = 0.85;
  double edge_label_frac = 0.5;
  int pretrain_steps = 200;
  bool normalize_features = true;
  int victim_steps = 200;
  // Unset means the per-architecture default of victim_classifier_options.
  std::optional<double> victim_lr;
  std::optional<double> victim_weight_decay;
  double victim_dropout = 0.5;

  int workers = 1;
  bool write_traces = true;

  /// Throws ConfigError.
  void validate() const;
  /// Copies shared fields into the attack configs.
  AttackConfig lisa_config() const;
  NiaConfig nia_config() const;
};

struct TargetResult {
  NodeId target = 0;
  int true_label = 0;
  int clean_pred = 0;
  int attacked_pred = 0;
  int y_atk = -1;
  bool link_success = false;
  int payload_links = 0;
  bool misclassified = false;
  NodeId payload_nodes = 0;
  bool failed = false;
  std::string failure;
  double attack_seconds = 0.0;
  double eval_seconds = 0.0;
};

/// Victim classifier optimizer: lr 0.01 / decay 5e-4, except SGC (lr 0.2 / decay 5e-6),
/// whose single linear layer underfits row-normalized features otherwise.
AdamOptions victim_classifier_options(ClassifierArch arch);

/// Loads `config.dataset`, draws the label split and applies feature preprocessing.
Graph load_experiment_graph(const ExperimentConfig& config);

/// Uniform sample without replacement from the nodes outside the label set.
std::vector<NodeId> sample_targets(const Graph& g, int m, std::uint64_t seed);

/// Victim models and shared state of one dataset run.
struct Environment {
  const Graph* graph = nullptr;
  AttackContext ctx;
  LinkArch recommender = LinkArch::gae;
  ClassifierArch classifier = ClassifierArch::gcn;
  std::uint64_t seed = 0;
  int victim_steps = 200;
  AdamOptions victim_cls_options;
  AdamOptions victim_link_options;
  double victim_dropout = 0.5;
  ClassifierParams clean_victim;
  Prediction clean_victim_prediction;
};

Environment make_environment(const Graph& g, const ExperimentConfig& config);

/// Trains a fresh victim classifier (same seed for every target) on `view`.
ClassifierParams train_victim_classifier(const Environment& env, const ModelGraph& view);
/// Trains a fresh victim recommender on the poisoned graph.
LinkPredictorParams train_victim_recommender(const Environment& env, const PoisonedGraph& g_p);

/// Recommender -> top-k -> G_r -> classifier for an isolated payload.
TargetResult evaluate_target(const Environment& env, const Subgraph& payload, NodeId target, int k);
/// Classification after an NIA draw (no recommender involved).
TargetResult evaluate_nia(const Environment& env, const NiaResult& nia);
/// Clean-graph outcome.
TargetResult evaluate_clean(const Environment& env, NodeId target);

struct ExperimentSummary {
  double lsr = 0.0;  // percent
  double asr = 0.0;  // percent
  double clean_misclassification = 0.0;  // percent, over the same targets
  int evaluated = 0;
  int failed = 0;
  std::vector<TargetResult> results;
  std::vector<Subgraph> payloads;  // per result, empty for attack none
};

/// Means over the non-failed results.
void aggregate(ExperimentSummary& summary);

/// Runs the configured attack on every sampled target; writes results.csv,
/// summary.json, timings.csv and trace/<target>.jsonl when `out` is set.
ExperimentSummary run_experiment(const Graph& g, const ExperimentConfig& config);
ExperimentSummary run_experiment(const ExperimentConfig& config);

/// Runs `fn(i)` for i in [0, n) on a bounded pool of worker threads.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

struct SimilarityReport {
  std::vector<NodeId> targets;      // per sample
  std::vector<NodeId> payload_index;
  std::vector<double> similarity;
  std::vector<int> histogram;       // 40 bins of width 0.05 over [-1, 1]
  int skipped = 0;                  // zero-norm embeddings
  double mean() const;
  /// Center of the fullest bin, lowest bin on ties.
  double peak() const;
};

inline constexpr int kSimilarityBins = 40;

/// Trains a GAE on the clean graph, embeds each target and its payload
/// (payload isolated in G_p) and returns all target-payload cosine similarities.
SimilarityReport similarity_analysis(const Graph& g, const EdgeSplit& split,
                                     std::span<const NodeId> targets,
                                     std::span<const Subgraph> payloads, std::uint64_t seed,
                                     int steps = 200);
void write_similarity_csv(const std::filesystem::path& file, const SimilarityReport& report);

/// Grid keys: alpha, beta, subgraph_nodes, subgraph_edges, k, lsr, targets.
using SweepGrid = std::vector<std::pair<std::string, std::vector<double>>>;
SweepGrid parse_grid(std::string_view spec);

struct SweepCell {
  std::map<std::string, double> values;
  std::optional<ExperimentSummary> summary;
  std::string error;
};

std::vector<SweepCell> sweep(const ExperimentConfig& base, const SweepGrid& grid);
void write_sweep_csv(const std::filesystem::path& file, const SweepGrid& grid,
                     std::span<const SweepCell> cells);

/// results.csv contents (deterministic: no timings).
std::string results_csv(std::span<const TargetResult> results);
std::string summary_json(const ExperimentConfig& config, const ExperimentSummary& summary,
                         const std::string& version);

/// git describe of the build.
const char* version_string();

}  // namespace lisa
