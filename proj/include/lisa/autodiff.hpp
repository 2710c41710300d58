#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "lisa/graph.hpp"

/// Minimal reverse-mode differentiation over the dense/sparse matrix
/// primitives used by the surrogate models. A Tape records values in
/// topological order; backward() replays it once from a scalar root.
namespace lisa::ad {

class AutodiffError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Handle to a node on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;

  bool valid() const { return id != npos; }
};

class Tape;

/// Adjoints produced by one backward pass. Every differentiable leaf has an
/// entry (zeros when the root does not depend on it).
class Gradients {
 public:
  const Matrix& of(Var v) const;

 private:
  friend class Tape;
  std::vector<Matrix> adjoints_;
};

class Tape {
 public:
  Var constant(Matrix value);
  Var variable(Matrix value);

  const Matrix& value(Var v) const;
  double scalar(Var v) const;
  bool requires_grad(Var v) const;
  const char* op_name(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var scale(Var a, double factor);
  Var hadamard(Var a, Var b);
  Var relu(Var a);
  Var softplus(Var a);
  Var exp(Var a);
  Var sum(Var a);
  Var squared_norm(Var a);

  /// Keeps a sparse operand alive for the lifetime of the tape.
  const SparseMatrix& own(SparseMatrix s) { return owned_.emplace_back(std::move(s)); }

  /// s * a for a constant sparse s; s must outlive the tape.
  Var spmm(const SparseMatrix& s, Var a);
  /// [host; payload] * weight with constant sparse host rows.
  Var feature_transform(const SparseMatrix& host, Var payload, Var weight);
  /// D^{-1/2}(A + B + I)D^{-1/2} h, where A is the constant adjacency and B a
  /// (possibly differentiable) dense block placed at rows/cols [offset, offset + n).
  /// Degrees are row sums, so the dependence of D on B is differentiated too.
  /// `block` may be an invalid Var when there is no separate block.
  Var gcn_propagate(const SparseMatrix& adjacency, Var block, Var h, NodeId offset);

  /// Mean softmax cross-entropy over `rows` of `logits`.
  Var softmax_cross_entropy(Var logits, std::span<const NodeId> rows, std::span<const int> labels);
  /// Inner-product decoder reconstruction loss with clamped probabilities,
  /// averaged over positives.
  Var recon_loss(Var z, std::span<const Edge> positives, std::span<const Edge> negatives);
  /// -1/2 * mean_rows sum_cols (1 + logvar - mu^2 - exp(logvar)).
  Var gaussian_kl(Var mu, Var logvar);

  /// Branch signature: a hash of every non-smooth decision taken while
  /// recording (ReLU sign patterns, probability clamps, caller-noted choices).
  /// Only maintained when tracking is enabled.
  void set_track_branches(bool on) { track_branches_ = on; }
  void note_branch(std::uint64_t value);
  std::uint64_t branch_signature() const { return signature_; }

  /// Reverse pass from a 1x1 root.
  Gradients backward(Var root) const;

 private:
  using BackwardFn = std::function<void(const Tape&, const Matrix&, std::vector<Matrix>&)>;

  struct Node {
    const char* op;
    Matrix value;
    bool requires_grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };

  Var push(const char* op, Matrix value, std::vector<std::size_t> parents, BackwardFn backward);
  const Node& node(Var v) const;
  bool needs(std::size_t id) const { return nodes_[id].requires_grad; }
  static void accumulate(std::vector<Matrix>& adjoints, std::size_t id, const Matrix& grad);

  std::vector<Node> nodes_;
  std::deque<SparseMatrix> owned_;
  bool track_branches_ = false;
  std::uint64_t signature_ = 1469598103934665603ULL;
};

/// Gradients of one attack-loss evaluation, restricted to the payload.
struct GradientBundle {
  Matrix features;   // n_V x D
  Matrix adjacency;  // n_V x n_V, symmetrized
  std::vector<Matrix> params;
};

/// (raw + raw^T) / 2
Matrix symmetrize(const Matrix& raw);

struct Probe {
  double value = 0.0;
  std::uint64_t branch = 0;
};

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  Eigen::Index worst_row = -1;
  Eigen::Index worst_col = -1;
  bool non_finite = false;
};

/// Central differences (f(x + eps e) - f(x - eps e)) / 2 eps per coordinate,
/// compared with `analytic` using max(|analytic|, |numeric|, 1e-8) as the
/// relative-error denominator. Coordinates whose probes change the branch
/// signature (a kink lies within eps) are skipped, as are coordinates
/// rejected by `include`.
FiniteDiffReport finite_diff_check(const std::function<Probe(const Matrix&)>& loss,
                                   const Matrix& at, const Matrix& analytic, double epsilon,
                                   const std::function<bool(Eigen::Index, Eigen::Index)>& include = {});

}  // namespace lisa::ad
