#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lisa/autodiff.hpp"
#include "lisa/graph.hpp"

namespace lisa {

enum class ClassifierArch { gcn, sgc, sage };
enum class LinkArch { gae, vgae };
/// Hidden-layer nonlinearity. softplus and identity exist for smooth
/// gradient checks and propagation cross-checks.
enum class Activation { relu, softplus, identity };

ClassifierArch parse_classifier_arch(std::string_view tag);
LinkArch parse_link_arch(std::string_view tag);
std::string to_string(ClassifierArch arch);
std::string to_string(LinkArch arch);

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// gcn: [W0 (D x H), W1 (H x C)]
/// sgc: [W (D x C)], propagated sgc_k times
/// sage: [Wself0, Wneigh0 (D x H), Wself1, Wneigh1 (H x C)]
struct ClassifierParams {
  ClassifierArch arch = ClassifierArch::gcn;
  Activation activation = Activation::relu;
  int hidden = 64;
  int num_classes = 0;
  int sgc_k = 2;
  std::vector<Matrix> weights;

  void check(Eigen::Index feature_dim) const;
};

/// gae: [W0 (D x H), Wmu (H x E)]
/// vgae: [W0, Wmu, Wlogvar (H x E)]
struct LinkPredictorParams {
  LinkArch arch = LinkArch::gae;
  int hidden = 32;
  int embedding = 16;
  std::vector<Matrix> weights;

  void check(Eigen::Index feature_dim) const;
};

/// Glorot-uniform initialization.
ClassifierParams init_classifier(ClassifierArch arch, Eigen::Index feature_dim, int num_classes,
                                 Rng& rng, int hidden = 64);
LinkPredictorParams init_link_predictor(LinkArch arch, Eigen::Index feature_dim, Rng& rng,
                                        int hidden = 32, int embedding = 16);

struct Prediction {
  Matrix logits;
  std::vector<int> classes;  // row argmax, lowest index on ties
};

/// Row argmax with lowest-index tie-break.
int argmax(const RowVector& row);

/// A ModelGraph bound to a tape. Payload features and the payload block are
/// tape leaves so that they can be differentiated.
struct TapeGraph {
  const ModelGraph* graph = nullptr;
  ad::Var payload_features;
  ad::Var payload_block;  // invalid when the payload block is merged into the adjacency
};

TapeGraph bind_graph(ad::Tape& tape, const ModelGraph& g, bool grad_features, bool grad_block);
std::vector<ad::Var> bind_params(ad::Tape& tape, const std::vector<Matrix>& weights, bool grad);

/// Logits on the tape. `dropout_rng` non-null enables training-mode dropout.
ad::Var classifier_forward(ad::Tape& tape, const TapeGraph& g, const ClassifierParams& params,
                           std::span<const ad::Var> weights, Rng* dropout_rng = nullptr,
                           double dropout = 0.5);

struct Encoding {
  ad::Var z;
  ad::Var mu;
  ad::Var logvar;  // vgae only
};

/// Encoder on the tape. With `noise_rng` set a vgae samples z = mu + sigma * eps,
/// otherwise z = mu.
Encoding link_encoder_forward(ad::Tape& tape, const TapeGraph& g, const LinkPredictorParams& params,
                              std::span<const ad::Var> weights, Rng* noise_rng = nullptr);

Prediction classify(const ModelGraph& g, const ClassifierParams& params);

struct LinkEmbedding {
  Matrix z;
  double kl = 0.0;
};

/// Evaluation-mode encoding (z = mu for vgae). With `noise_seed` set a vgae
/// samples z and reports its KL term.
LinkEmbedding encode_links(const ModelGraph& g, const LinkPredictorParams& params,
                           std::optional<std::uint64_t> noise_seed = std::nullopt);

double sigmoid(double x);
/// sigmoid(z_i . z_j) per pair.
std::vector<double> decode_scores(const Matrix& z, std::span<const Edge> pairs);

/// Clamped reconstruction loss from already-decoded probabilities, averaged
/// over positives.
double recon_loss(std::span<const double> positive_scores, std::span<const double> negative_scores);

/// Mean cross-entropy of `logits` over `nodes`. Throws on an empty set.
double cls_train_loss(const Matrix& logits, std::span<const int> labels,
                      std::span<const NodeId> nodes);

struct AdamOptions {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  void step(std::vector<Matrix>& params, const std::vector<Matrix>& grads);
  int steps() const { return t_; }

 private:
  AdamOptions options_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  int t_ = 0;
};

class NonFiniteLoss : public ModelError {
 public:
  using ModelError::ModelError;
};

/// Warm-startable full-batch trainer for a classifier.
class ClassifierTrainer {
 public:
  ClassifierTrainer(ClassifierParams params, AdamOptions options, std::uint64_t seed,
                    double dropout = 0.5);

  /// One optimizer step; returns the training loss before the update.
  double step(const ModelGraph& g, std::span<const NodeId> nodes, std::span<const int> labels);
  const ClassifierParams& params() const { return params_; }

 private:
  ClassifierParams params_;
  Adam adam_;
  std::uint64_t seed_;
  int steps_ = 0;
  double dropout_;
};

/// Warm-startable trainer for a link predictor. Negatives are drawn per step
/// from the non-edges of `sampling_graph`.
class LinkPredictorTrainer {
 public:
  LinkPredictorTrainer(LinkPredictorParams params, AdamOptions options, std::uint64_t seed,
                       int negatives_per_positive = 1);

  double step(const ModelGraph& message_graph, const PoisonedGraph& sampling_graph,
              std::span<const Edge> positives);
  const LinkPredictorParams& params() const { return params_; }

 private:
  LinkPredictorParams params_;
  Adam adam_;
  Rng rng_;
  int negatives_;
};

struct InnerData {
  const ModelGraph* link_graph = nullptr;        // G_p over the message edges
  const PoisonedGraph* sampling_graph = nullptr;  // G_p, for negatives
  std::span<const Edge> positives;
  const ModelGraph* cls_graph = nullptr;  // G_r
  std::span<const NodeId> label_nodes;
  std::span<const int> labels;
};

struct InnerLosses {
  double link = 0.0;
  double cls = 0.0;
};

/// `steps` updates of each surrogate. Either trainer may be null.
InnerLosses train_inner(ClassifierTrainer* classifier, LinkPredictorTrainer* predictor,
                        const InnerData& data, int steps);

/// Little-endian f64 weights in `<stem>.bin` plus a `<stem>.json` sidecar.
void save_checkpoint(const std::filesystem::path& stem, const ClassifierParams& params);
void save_checkpoint(const std::filesystem::path& stem, const LinkPredictorParams& params);
ClassifierParams load_classifier_checkpoint(const std::filesystem::path& stem);
LinkPredictorParams load_link_checkpoint(const std::filesystem::path& stem);

}  // namespace lisa
