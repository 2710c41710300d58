#include "lisa/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "lisa/seed.hpp"

namespace lisa {

namespace {

using ad::Tape;
using ad::Var;

constexpr double kProbFloor = 1e-7;

Matrix glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      w(r, c) = dist(rng);
    }
  }
  return w;
}

void expect_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ModelError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
  }
}

Var activate(Tape& tape, Var x, Activation act) {
  switch (act) {
    case Activation::relu:
      return tape.relu(x);
    case Activation::softplus:
      return tape.softplus(x);
    case Activation::identity:
      return x;
  }
  return x;
}

Var dropout(Tape& tape, Var x, Rng* rng, double p) {
  if (rng == nullptr || p <= 0.0) {
    return x;
  }
  const Matrix& v = tape.value(x);
  // keep iff a raw 64-bit draw falls below (1 - p) * 2^64
  const auto threshold = static_cast<std::uint64_t>(std::ldexp(1.0 - p, 64) - 1.0);
  Matrix mask(v.rows(), v.cols());
  const double scale = 1.0 / (1.0 - p);
  // Row-major draw: appending isolated rows leaves the earlier rows' masks unchanged.
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    for (Eigen::Index c = 0; c < mask.cols(); ++c) {
      mask(r, c) = (*rng)() < threshold ? scale : 0.0;
    }
  }
  return tape.hadamard(x, tape.constant(std::move(mask)));
}

Var propagate(Tape& tape, const TapeGraph& g, Var h) {
  return tape.gcn_propagate(g.graph->adjacency, g.payload_block, h, g.graph->num_host());
}

/// Row-normalized adjacency (mean over neighbors); isolated rows stay zero.
SparseMatrix mean_operator(const ModelGraph& g) {
  SparseMatrix a = g.adjacency;
  if (g.has_payload_block()) {
    std::vector<Eigen::Triplet<double>> extra;
    const NodeId off = g.num_host();
    for (Eigen::Index i = 0; i < g.payload_block.rows(); ++i) {
      for (Eigen::Index j = 0; j < g.payload_block.cols(); ++j) {
        if (g.payload_block(i, j) != 0.0) {
          extra.emplace_back(off + i, off + j, g.payload_block(i, j));
        }
      }
    }
    SparseMatrix b(a.rows(), a.cols());
    b.setFromTriplets(extra.begin(), extra.end());
    a += b;
  }
  for (Eigen::Index i = 0; i < a.outerSize(); ++i) {
    double total = 0.0;
    for (SparseMatrix::InnerIterator it(a, i); it; ++it) {
      total += it.value();
    }
    if (total > 0.0) {
      for (SparseMatrix::InnerIterator it(a, i); it; ++it) {
        it.valueRef() /= total;
      }
    }
  }
  return a;
}

std::vector<Matrix> collect(const ad::Gradients& grads, std::span<const Var> vars) {
  std::vector<Matrix> out;
  out.reserve(vars.size());
  for (Var v : vars) {
    out.push_back(grads.of(v));
  }
  return out;
}

}  // namespace

ClassifierArch parse_classifier_arch(std::string_view tag) {
  if (tag == "gcn") return ClassifierArch::gcn;
  if (tag == "sgc") return ClassifierArch::sgc;
  if (tag == "sage") return ClassifierArch::sage;
  throw ModelError("unknown classifier '" + std::string(tag) + "' (expected gcn|sgc|sage)");
}

LinkArch parse_link_arch(std::string_view tag) {
  if (tag == "gae") return LinkArch::gae;
  if (tag == "vgae") return LinkArch::vgae;
  throw ModelError("unknown recommender '" + std::string(tag) + "' (expected gae|vgae)");
}

std::string to_string(ClassifierArch arch) {
  switch (arch) {
    case ClassifierArch::gcn:
      return "gcn";
    case ClassifierArch::sgc:
      return "sgc";
    case ClassifierArch::sage:
      return "sage";
  }
  return "?";
}

std::string to_string(LinkArch arch) { return arch == LinkArch::gae ? "gae" : "vgae"; }

void ClassifierParams::check(Eigen::Index d) const {
  const Eigen::Index c = num_classes;
  const Eigen::Index h = hidden;
  switch (arch) {
    case ClassifierArch::gcn:
      if (weights.size() != 2) throw ModelError("gcn needs 2 weight matrices");
      expect_shape(weights[0], d, h, "gcn W0");
      expect_shape(weights[1], h, c, "gcn W1");
      break;
    case ClassifierArch::sgc:
      if (weights.size() != 1) throw ModelError("sgc needs 1 weight matrix");
      expect_shape(weights[0], d, c, "sgc W");
      if (sgc_k < 1) throw ModelError("sgc propagation depth must be >= 1");
      break;
    case ClassifierArch::sage:
      if (weights.size() != 4) throw ModelError("sage needs 4 weight matrices");
      expect_shape(weights[0], d, h, "sage Wself0");
      expect_shape(weights[1], d, h, "sage Wneigh0");
      expect_shape(weights[2], h, c, "sage Wself1");
      expect_shape(weights[3], h, c, "sage Wneigh1");
      break;
  }
}

void LinkPredictorParams::check(Eigen::Index d) const {
  const std::size_t expected = arch == LinkArch::gae ? 2 : 3;
  if (weights.size() != expected) {
    throw ModelError(to_string(arch) + " needs " + std::to_string(expected) + " weight matrices");
  }
  expect_shape(weights[0], d, hidden, "encoder W0");
  expect_shape(weights[1], hidden, embedding, "encoder Wmu");
  if (arch == LinkArch::vgae) {
    expect_shape(weights[2], hidden, embedding, "encoder Wlogvar");
  }
}

ClassifierParams init_classifier(ClassifierArch arch, Eigen::Index d, int num_classes, Rng& rng,
                                 int hidden) {
  ClassifierParams p;
  p.arch = arch;
  p.hidden = hidden;
  p.num_classes = num_classes;
  switch (arch) {
    case ClassifierArch::gcn:
      p.weights.push_back(glorot(d, hidden, rng));
      p.weights.push_back(glorot(hidden, num_classes, rng));
      break;
    case ClassifierArch::sgc:
      p.weights.push_back(glorot(d, num_classes, rng));
      break;
    case ClassifierArch::sage:
      p.weights.push_back(glorot(d, hidden, rng));
      p.weights.push_back(glorot(d, hidden, rng));
      p.weights.push_back(glorot(hidden, num_classes, rng));
      p.weights.push_back(glorot(hidden, num_classes, rng));
      break;
  }
  return p;
}

LinkPredictorParams init_link_predictor(LinkArch arch, Eigen::Index d, Rng& rng, int hidden,
                                        int embedding) {
  LinkPredictorParams p;
  p.arch = arch;
  p.hidden = hidden;
  p.embedding = embedding;
  p.weights.push_back(glorot(d, hidden, rng));
  p.weights.push_back(glorot(hidden, embedding, rng));
  if (arch == LinkArch::vgae) {
    p.weights.push_back(glorot(hidden, embedding, rng));
  }
  return p;
}

int argmax(const RowVector& row) {
  int best = 0;
  for (Eigen::Index c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) {
      best = static_cast<int>(c);
    }
  }
  return best;
}

TapeGraph bind_graph(Tape& tape, const ModelGraph& g, bool grad_features, bool grad_block) {
  TapeGraph tg;
  tg.graph = &g;
  tg.payload_features =
      grad_features ? tape.variable(g.payload_features) : tape.constant(g.payload_features);
  if (g.has_payload_block()) {
    tg.payload_block = grad_block ? tape.variable(g.payload_block) : tape.constant(g.payload_block);
  }
  return tg;
}

std::vector<Var> bind_params(Tape& tape, const std::vector<Matrix>& weights, bool grad) {
  std::vector<Var> out;
  out.reserve(weights.size());
  for (const Matrix& w : weights) {
    out.push_back(grad ? tape.variable(w) : tape.constant(w));
  }
  return out;
}

Var classifier_forward(Tape& tape, const TapeGraph& g, const ClassifierParams& params,
                       std::span<const Var> w, Rng* dropout_rng, double p) {
  const SparseMatrix& host = *g.graph->host_features;
  switch (params.arch) {
    case ClassifierArch::gcn: {
      Var h = propagate(tape, g, tape.feature_transform(host, g.payload_features, w[0]));
      h = dropout(tape, activate(tape, h, params.activation), dropout_rng, p);
      return propagate(tape, g, tape.matmul(h, w[1]));
    }
    case ClassifierArch::sgc: {
      Var h = tape.feature_transform(host, g.payload_features, w[0]);
      for (int k = 0; k < params.sgc_k; ++k) {
        h = propagate(tape, g, h);
      }
      return h;
    }
    case ClassifierArch::sage: {
      const SparseMatrix& mean = tape.own(mean_operator(*g.graph));
      Var self0 = tape.feature_transform(host, g.payload_features, w[0]);
      Var neigh0 = tape.spmm(mean, tape.feature_transform(host, g.payload_features, w[1]));
      Var h = dropout(tape, activate(tape, tape.add(self0, neigh0), params.activation),
                      dropout_rng, p);
      return tape.add(tape.matmul(h, w[2]), tape.spmm(mean, tape.matmul(h, w[3])));
    }
  }
  throw ModelError("unknown classifier architecture");
}

Encoding link_encoder_forward(Tape& tape, const TapeGraph& g, const LinkPredictorParams& params,
                              std::span<const Var> w, Rng* noise_rng) {
  const SparseMatrix& host = *g.graph->host_features;
  Var h = propagate(tape, g, tape.feature_transform(host, g.payload_features, w[0]));
  h = tape.relu(h);
  Encoding enc;
  enc.mu = propagate(tape, g, tape.matmul(h, w[1]));
  enc.z = enc.mu;
  if (params.arch == LinkArch::vgae) {
    enc.logvar = propagate(tape, g, tape.matmul(h, w[2]));
    if (noise_rng != nullptr) {
      const Matrix& mu = tape.value(enc.mu);
      std::normal_distribution<double> normal;
      Matrix eps(mu.rows(), mu.cols());
      for (Eigen::Index i = 0; i < eps.size(); ++i) {
        eps.data()[i] = normal(*noise_rng);
      }
      Var sigma = tape.exp(tape.scale(enc.logvar, 0.5));
      enc.z = tape.add(enc.mu, tape.hadamard(sigma, tape.constant(std::move(eps))));
    }
  }
  return enc;
}

Prediction classify(const ModelGraph& g, const ClassifierParams& params) {
  params.check(g.feature_dim());
  Tape tape;
  const TapeGraph tg = bind_graph(tape, g, false, false);
  const auto w = bind_params(tape, params.weights, false);
  Prediction pred;
  pred.logits = tape.value(classifier_forward(tape, tg, params, w));
  pred.classes.resize(static_cast<std::size_t>(pred.logits.rows()));
  for (Eigen::Index i = 0; i < pred.logits.rows(); ++i) {
    pred.classes[static_cast<std::size_t>(i)] = argmax(pred.logits.row(i));
  }
  return pred;
}

LinkEmbedding encode_links(const ModelGraph& g, const LinkPredictorParams& params,
                           std::optional<std::uint64_t> noise_seed) {
  params.check(g.feature_dim());
  Tape tape;
  const TapeGraph tg = bind_graph(tape, g, false, false);
  const auto w = bind_params(tape, params.weights, false);
  Rng rng(noise_seed.value_or(0));
  const Encoding enc = link_encoder_forward(tape, tg, params, w, noise_seed ? &rng : nullptr);
  LinkEmbedding out;
  out.z = tape.value(enc.z);
  if (params.arch == LinkArch::vgae && noise_seed) {
    out.kl = tape.scalar(tape.gaussian_kl(enc.mu, enc.logvar));
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> decode_scores(const Matrix& z, std::span<const Edge> pairs) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const Edge& e : pairs) {
    if (e.u < 0 || e.v < 0 || e.u >= z.rows() || e.v >= z.rows()) {
      throw ModelError("decode_scores: pair index out of range");
    }
    out.push_back(sigmoid(z.row(e.u).dot(z.row(e.v))));
  }
  return out;
}

double recon_loss(std::span<const double> positive_scores,
                  std::span<const double> negative_scores) {
  double loss = 0.0;
  for (double p : positive_scores) {
    loss -= std::log(std::clamp(p, kProbFloor, 1.0 - kProbFloor));
  }
  for (double p : negative_scores) {
    loss -= std::log(1.0 - std::clamp(p, kProbFloor, 1.0 - kProbFloor));
  }
  const double denom = positive_scores.empty() ? 1.0 : static_cast<double>(positive_scores.size());
  return loss / denom;
}

double cls_train_loss(const Matrix& logits, std::span<const int> labels,
                      std::span<const NodeId> nodes) {
  if (nodes.empty()) {
    throw ModelError("cls_train_loss: empty node set");
  }
  Tape tape;
  std::vector<int> picked;
  picked.reserve(nodes.size());
  for (NodeId v : nodes) {
    picked.push_back(labels[static_cast<std::size_t>(v)]);
  }
  return tape.scalar(tape.softmax_cross_entropy(tape.constant(logits), nodes, picked));
}

void Adam::step(std::vector<Matrix>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size()) {
    throw ModelError("Adam: parameter and gradient counts differ");
  }
  if (m_.empty()) {
    for (const Matrix& p : params) {
      m_.push_back(Matrix::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, t_);
  const double c2 = 1.0 - std::pow(options_.beta2, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix g = grads[i];
    if (options_.weight_decay > 0.0) {
      g += options_.weight_decay * params[i];
    }
    m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * g;
    v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * g.cwiseAbs2();
    params[i].array() -=
        options_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + options_.eps);
  }
}

ClassifierTrainer::ClassifierTrainer(ClassifierParams params, AdamOptions options,
                                     std::uint64_t seed, double dropout)
    : params_(std::move(params)), adam_(options), seed_(seed), dropout_(dropout) {}

double ClassifierTrainer::step(const ModelGraph& g, std::span<const NodeId> nodes,
                               std::span<const int> labels) {
  params_.check(g.feature_dim());
  Tape tape;
  const TapeGraph tg = bind_graph(tape, g, false, false);
  const auto w = bind_params(tape, params_.weights, true);
  Rng mask_rng(derive_seed(seed_, {static_cast<std::uint64_t>(steps_++)}));
  const Var logits = classifier_forward(tape, tg, params_, w, &mask_rng, dropout_);
  std::vector<int> picked;
  picked.reserve(nodes.size());
  for (NodeId v : nodes) {
    picked.push_back(labels[static_cast<std::size_t>(v)]);
  }
  const Var loss = tape.softmax_cross_entropy(logits, nodes, picked);
  const double value = tape.scalar(loss);
  if (!std::isfinite(value)) {
    throw NonFiniteLoss("classifier training loss is not finite");
  }
  const auto grads = tape.backward(loss);
  adam_.step(params_.weights, collect(grads, w));
  return value;
}

LinkPredictorTrainer::LinkPredictorTrainer(LinkPredictorParams params, AdamOptions options,
                                           std::uint64_t seed, int negatives_per_positive)
    : params_(std::move(params)), adam_(options), rng_(seed), negatives_(negatives_per_positive) {}

double LinkPredictorTrainer::step(const ModelGraph& message_graph,
                                  const PoisonedGraph& sampling_graph,
                                  std::span<const Edge> positives) {
  params_.check(message_graph.feature_dim());
  const auto negatives = sample_negative_edges(sampling_graph, negatives_, positives, rng_);
  Tape tape;
  const TapeGraph tg = bind_graph(tape, message_graph, false, false);
  const auto w = bind_params(tape, params_.weights, true);
  const Encoding enc = link_encoder_forward(tape, tg, params_, w, &rng_);
  Var loss = tape.recon_loss(enc.z, positives, negatives);
  if (params_.arch == LinkArch::vgae) {
    // KL scaled per node as in the reference autoencoder objective.
    const double scale = 1.0 / std::max<double>(1.0, message_graph.num_nodes());
    loss = tape.add(loss, tape.scale(tape.gaussian_kl(enc.mu, enc.logvar), scale));
  }
  const double value = tape.scalar(loss);
  if (!std::isfinite(value)) {
    throw NonFiniteLoss("link predictor training loss is not finite");
  }
  const auto grads = tape.backward(loss);
  adam_.step(params_.weights, collect(grads, w));
  return value;
}

InnerLosses train_inner(ClassifierTrainer* classifier, LinkPredictorTrainer* predictor,
                        const InnerData& data, int steps) {
  InnerLosses last;
  for (int s = 0; s < steps; ++s) {
    if (predictor != nullptr) {
      last.link = predictor->step(*data.link_graph, *data.sampling_graph, data.positives);
    }
    if (classifier != nullptr) {
      last.cls = classifier->step(*data.cls_graph, data.label_nodes, data.labels);
    }
  }
  return last;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

using nlohmann::json;

void write_weights(const std::filesystem::path& stem, const std::vector<Matrix>& weights,
                   json sidecar) {
  std::filesystem::path bin = stem;
  bin += ".bin";
  std::ofstream out(bin, std::ios::binary);
  if (!out) {
    throw ModelError("cannot write " + bin.string());
  }
  json shapes = json::array();
  for (const Matrix& w : weights) {
    shapes.push_back({w.rows(), w.cols()});
    // row-major order
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(w(r, c));
        if constexpr (std::endian::native == std::endian::big) {
          bits = __builtin_bswap64(bits);
        }
        char bytes[8];
        std::memcpy(bytes, &bits, 8);
        out.write(bytes, 8);
      }
    }
  }
  sidecar["shapes"] = shapes;
  sidecar["dtype"] = "float64-le";
  sidecar["layout"] = "row-major";
  std::filesystem::path meta = stem;
  meta += ".json";
  std::ofstream side(meta);
  if (!side) {
    throw ModelError("cannot write " + meta.string());
  }
  side << sidecar.dump(2) << "\n";
}

std::pair<json, std::vector<Matrix>> read_weights(const std::filesystem::path& stem) {
  std::filesystem::path meta = stem;
  meta += ".json";
  std::ifstream side(meta);
  if (!side) {
    throw ModelError("cannot read " + meta.string());
  }
  json j;
  try {
    j = json::parse(side);
  } catch (const json::exception& e) {
    throw ModelError(meta.string() + ": " + e.what());
  }
  std::filesystem::path bin = stem;
  bin += ".bin";
  std::ifstream in(bin, std::ios::binary);
  if (!in) {
    throw ModelError("cannot read " + bin.string());
  }
  std::vector<Matrix> weights;
  for (const auto& shape : j.at("shapes")) {
    Matrix w(shape.at(0).get<Eigen::Index>(), shape.at(1).get<Eigen::Index>());
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        char bytes[8];
        if (!in.read(bytes, 8)) {
          throw ModelError(bin.string() + " is shorter than its sidecar declares");
        }
        std::uint64_t bits = 0;
        std::memcpy(&bits, bytes, 8);
        if constexpr (std::endian::native == std::endian::big) {
          bits = __builtin_bswap64(bits);
        }
        w(r, c) = std::bit_cast<double>(bits);
      }
    }
    weights.push_back(std::move(w));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ModelError(bin.string() + " is longer than its sidecar declares");
  }
  return {j, weights};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, const ClassifierParams& p) {
  json j{{"kind", "classifier"}, {"arch", to_string(p.arch)}, {"hidden", p.hidden},
         {"num_classes", p.num_classes}, {"sgc_k", p.sgc_k}};
  write_weights(stem, p.weights, j);
}

void save_checkpoint(const std::filesystem::path& stem, const LinkPredictorParams& p) {
  json j{{"kind", "link_predictor"}, {"arch", to_string(p.arch)}, {"hidden", p.hidden},
         {"embedding", p.embedding}};
  write_weights(stem, p.weights, j);
}

ClassifierParams load_classifier_checkpoint(const std::filesystem::path& stem) {
  auto [j, weights] = read_weights(stem);
  if (j.value("kind", "") != "classifier") {
    throw ModelError(stem.string() + " is not a classifier checkpoint");
  }
  ClassifierParams p;
  p.arch = parse_classifier_arch(j.at("arch").get<std::string>());
  p.hidden = j.at("hidden").get<int>();
  p.num_classes = j.at("num_classes").get<int>();
  p.sgc_k = j.value("sgc_k", 2);
  p.weights = std::move(weights);
  p.check(p.weights.empty() ? 0 : p.weights.front().rows());
  return p;
}

LinkPredictorParams load_link_checkpoint(const std::filesystem::path& stem) {
  auto [j, weights] = read_weights(stem);
  if (j.value("kind", "") != "link_predictor") {
    throw ModelError(stem.string() + " is not a link predictor checkpoint");
  }
  LinkPredictorParams p;
  p.arch = parse_link_arch(j.at("arch").get<std::string>());
  p.hidden = j.at("hidden").get<int>();
  p.embedding = j.at("embedding").get<int>();
  p.weights = std::move(weights);
  p.check(p.weights.empty() ? 0 : p.weights.front().rows());
  return p;
}

}  // namespace lisa
