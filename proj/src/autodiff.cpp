#include "lisa/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace lisa::ad {

namespace {

constexpr double kProbFloor = 1e-7;

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h * 1099511628211ULL;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw AutodiffError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()) + ")");
  }
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Row-major sparse times row-major dense walks both operands contiguously.
template <typename Dense>
Matrix sparse_times(const SparseMatrix& s, const Dense& d) {
  const RowMajorMatrix rhs = d;
  return RowMajorMatrix(s * rhs);
}

template <typename Dense>
Matrix sparse_transpose_times(const SparseMatrix& s, const Dense& d) {
  const RowMajorMatrix rhs = d;
  return RowMajorMatrix(s.transpose() * rhs);
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

const Matrix& Gradients::of(Var v) const {
  if (!v.valid() || v.id >= adjoints_.size() || adjoints_[v.id].size() == 0) {
    throw AutodiffError("no gradient recorded for this node");
  }
  return adjoints_[v.id];
}

// ---------------------------------------------------------------------------
// Recording

Var Tape::push(const char* op, Matrix value, std::vector<std::size_t> parents,
               BackwardFn backward) {
  bool tracked = false;
  for (std::size_t p : parents) {
    tracked = tracked || nodes_[p].requires_grad;
  }
  nodes_.push_back({op, std::move(value), tracked, std::move(parents),
                    tracked ? std::move(backward) : BackwardFn{}});
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) {
    throw AutodiffError("invalid tape handle");
  }
  return nodes_[v.id];
}

void Tape::accumulate(std::vector<Matrix>& adjoints, std::size_t id, const Matrix& grad) {
  Matrix& slot = adjoints[id];
  if (slot.size() == 0) {
    slot = grad;
  } else {
    slot += grad;
  }
}

Var Tape::constant(Matrix value) {
  nodes_.push_back({"constant", std::move(value), false, {}, {}});
  return Var{nodes_.size() - 1};
}

Var Tape::variable(Matrix value) {
  nodes_.push_back({"variable", std::move(value), true, {}, {}});
  return Var{nodes_.size() - 1};
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) {
    throw AutodiffError("value is not scalar");
  }
  return m(0, 0);
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

const char* Tape::op_name(Var v) const { return node(v).op; }

void Tape::note_branch(std::uint64_t value) {
  if (track_branches_) {
    signature_ = mix(signature_, value);
  }
}

Var Tape::matmul(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.cols() != bv.rows()) {
    throw AutodiffError("matmul: inner dimensions differ");
  }
  const std::size_t ia = a.id;
  const std::size_t ib = b.id;
  return push("matmul", av * bv, {ia, ib},
              [ia, ib](const Tape& t, const Matrix& g, std::vector<Matrix>& adj) {
                if (t.needs(ia)) {
                  accumulate(adj, ia, g * t.nodes_[ib].value.transpose());
                }
                if (t.needs(ib)) {
                  accumulate(adj, ib, t.nodes_[ia].value.transpose() * g);
                }
              });
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  const std::size_t ia = a.id;
  const std::size_t ib = b.id;
  return push("add", value(a) + value(b), {ia, ib},
              [ia, ib](const Tape& t, const Matrix& g, std::vector<Matrix>& adj) {
                if (t.needs(ia)) {
                  accumulate(adj, ia, g);
                }
                if (t.needs(ib)) {
                  accumulate(adj, ib, g);
                }
              });
}

Var Tape::scale(Var a, double factor) {
  const std::size_t ia = a.id;
  return push("scale", value(a) * factor, {ia},
              [ia, factor](const Tape&, const Matrix& g, std::vector<Matrix>& adj) {
                accumulate(adj, ia, g * factor);
              });
}

Var Tape::hadamard(Var a, Var b) {
  require_same_shape(value(a), value(b), "hadamard");
  const std::size_t ia = a.id;
  const std::size_t ib = b.id;
  return push("hadamard", value(a).cwiseProduct(value(b)), {ia, ib},
              [ia, ib](const Tape& t, const Matrix& g, std::vector<Matrix>& adj) {
                if (t.needs(ia)) {
                  accumulate(adj, ia, g.cwiseProduct(t.nodes_[ib].value));
                }
                if (t.needs(ib)) {
                  accumulate(adj, ib, g.cwiseProduct(t.nodes_[ia].value));
                }
              });
}

Var Tape::relu(Var a) {
  const Matrix& x = value(a);
  if (track_branches_) {
    std::uint64_t h = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      h = mix(h, v > 0.0 ? 2 : (v < 0.0 ? 0 : 1));
    }
    note_branch(h);
  }
  const std::size_t ia = a.id;
  return push("relu", x.cwiseMax(0.0), {ia},
              [ia](const Tape& t, const Matrix& g, std::vector<Matrix>& adj) {
                const Matrix& in = t.nodes_[ia].value;
                accumulate(adj, ia, g.cwiseProduct(in.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; })));
              });
}

Var Tape::softplus(Var a) {
  const std::size_t ia = a.id;
  return push("softplus", value(a).unaryExpr([](double v) { return lisa::ad::softplus(v); }), {ia},
              [ia](const Tape& t, const Matrix& g, std::vector<Matrix>& adj) {
                const Matrix& in = t.nodes_[ia].value;
                accumulate(adj, ia, g.cwiseProduct(in.unaryExpr([](double v) { return sigmoid(v); })));
              });
}

Var Tape::exp(Var a) {
  const std::size_t ia = a.id;
  Matrix out = value(a).array().exp().matrix();
  const std::size_t self = nodes_.size();
  return push("exp", std::move(out), {ia},
              [ia, self](const Tape& t, const Matrix& g, std::vector<Matrix>& adj) {
                accumulate(adj, ia, g.cwiseProduct(t.nodes_[self].value));
              });
}

Var Tape::sum(Var a) {
  const std::size_t ia = a.id;
  const Eigen::Index rows = value(a).rows();
  const Eigen::Index cols = value(a).cols();
  return push("sum", Matrix::Constant(1, 1, value(a).sum()), {ia},
              [ia, rows, cols](const Tape&, const Matrix& g, std::vector<Matrix>& adj) {
                accumulate(adj, ia, Matrix::Constant(rows, cols, g(0, 0)));
              });
}

Var Tape::squared_norm(Var a) {
  const std::size_t ia = a.id;
  return push("squared_norm", Matrix::Constant(1, 1, value(a).squaredNorm()), {ia},
              [ia](const Tape& t, const Matrix& g, std::vector<Matrix>& adj) {
                accumulate(adj, ia, t.nodes_[ia].value * (2.0 * g(0, 0)));
              });
}

Var Tape::spmm(const SparseMatrix& s, Var a) {
  if (s.cols() != value(a).rows()) {
    throw AutodiffError("spmm: inner dimensions differ");
  }
  const std::size_t ia = a.id;
  const SparseMatrix* sp = &s;
  return push("spmm", sparse_times(s, value(a)), {ia},
              [ia, sp](const Tape&, const Matrix& g, std::vector<Matrix>& adj) {
                accumulate(adj, ia, sparse_transpose_times(*sp, g));
              });
}

Var Tape::feature_transform(const SparseMatrix& host, Var payload, Var weight) {
  const Matrix& p = value(payload);
  const Matrix& w = value(weight);
  if (host.cols() != w.rows() || p.cols() != w.rows()) {
    throw AutodiffError("feature_transform: feature dimension mismatch");
  }
  const Eigen::Index n_host = host.rows();
  Matrix out(n_host + p.rows(), w.cols());
  out.topRows(n_host) = sparse_times(host, w);
  if (p.rows() > 0) {
    out.bottomRows(p.rows()).noalias() = p * w;
  }
  const std::size_t ip = payload.id;
  const std::size_t iw = weight.id;
  const SparseMatrix* hp = &host;
  return push("feature_transform", std::move(out), {ip, iw},
              [ip, iw, hp, n_host](const Tape& t, const Matrix& g, std::vector<Matrix>& adj) {
                const Matrix& pv = t.nodes_[ip].value;
                const Eigen::Index n_payload = pv.rows();
                if (t.needs(iw)) {
                  Matrix dw = sparse_transpose_times(*hp, g.topRows(n_host));
                  if (n_payload > 0) {
                    dw.noalias() += pv.transpose() * g.bottomRows(n_payload);
                  }
                  accumulate(adj, iw, dw);
                }
                if (t.needs(ip) && n_payload > 0) {
                  accumulate(adj, ip, g.bottomRows(n_payload) * t.nodes_[iw].value.transpose());
                }
              });
}

Var Tape::gcn_propagate(const SparseMatrix& adjacency, Var block, Var h, NodeId offset) {
  const Matrix& hv = value(h);
  const Eigen::Index n = adjacency.rows();
  if (adjacency.cols() != n || hv.rows() != n) {
    throw AutodiffError("gcn_propagate: adjacency and features disagree on node count");
  }
  const bool has_block = block.valid();
  const Eigen::Index nb = has_block ? value(block).rows() : 0;
  if (has_block && (value(block).cols() != nb || offset < 0 || offset + nb > n)) {
    throw AutodiffError("gcn_propagate: block does not fit the adjacency");
  }

  Vector degree = Vector::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (SparseMatrix::InnerIterator it(adjacency, i); it; ++it) {
      degree[i] += it.value();
    }
  }
  if (has_block) {
    degree.segment(offset, nb) += value(block).rowwise().sum();
  }
  const Vector inv_sqrt = degree.cwiseSqrt().cwiseInverse();
  const Matrix scaled = inv_sqrt.asDiagonal() * hv;
  Matrix mixed = sparse_times(adjacency, scaled);
  mixed += scaled;
  if (has_block) {
    mixed.middleRows(offset, nb).noalias() += value(block) * scaled.middleRows(offset, nb);
  }
  Matrix out = inv_sqrt.asDiagonal() * mixed;

  std::vector<std::size_t> parents{h.id};
  if (has_block) {
    parents.push_back(block.id);
  }
  const std::size_t ih = h.id;
  const std::size_t ib = has_block ? block.id : Var::npos;
  const SparseMatrix* ap = &adjacency;
  return push(
      "gcn_propagate", std::move(out), std::move(parents),
      [ih, ib, ap, offset, nb, inv_sqrt, scaled, mixed](const Tape& t, const Matrix& g,
                                                        std::vector<Matrix>& adj) {
        const Matrix& hv = t.nodes_[ih].value;
        const Matrix v = inv_sqrt.asDiagonal() * g;
        Matrix du = sparse_transpose_times(*ap, v);
        du += v;
        if (ib != Var::npos) {
          du.middleRows(offset, nb).noalias() +=
              t.nodes_[ib].value.transpose() * v.middleRows(offset, nb);
        }
        if (t.needs(ih)) {
          accumulate(adj, ih, inv_sqrt.asDiagonal() * du);
        }
        if (ib != Var::npos && t.needs(ib)) {
          // d(inv_sqrt)/d(degree) = -inv_sqrt^3 / 2
          Vector d_degree(nb);
          for (Eigen::Index r = 0; r < nb; ++r) {
            const Eigen::Index i = offset + r;
            const double d_inv = g.row(i).dot(mixed.row(i)) + du.row(i).dot(hv.row(i));
            d_degree[r] = -0.5 * d_inv * inv_sqrt[i] * inv_sqrt[i] * inv_sqrt[i];
          }
          Matrix db = v.middleRows(offset, nb) * scaled.middleRows(offset, nb).transpose();
          db.colwise() += d_degree;
          accumulate(adj, ib, db);
        }
      });
}

Var Tape::softmax_cross_entropy(Var logits, std::span<const NodeId> rows,
                                std::span<const int> labels) {
  const Matrix& x = value(logits);
  if (rows.empty()) {
    throw AutodiffError("softmax_cross_entropy: empty row set");
  }
  if (rows.size() != labels.size()) {
    throw AutodiffError("softmax_cross_entropy: rows and labels differ in length");
  }
  const auto m = static_cast<double>(rows.size());
  Matrix probs(static_cast<Eigen::Index>(rows.size()), x.cols());
  double loss = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const NodeId r = rows[k];
    if (r < 0 || r >= x.rows() || labels[k] < 0 || labels[k] >= x.cols()) {
      throw AutodiffError("softmax_cross_entropy: row or label out of range");
    }
    const double top = x.row(r).maxCoeff();
    const RowVector e = (x.row(r).array() - top).exp().matrix();
    const double z = e.sum();
    probs.row(static_cast<Eigen::Index>(k)) = e / z;
    loss += -(x(r, labels[k]) - top - std::log(z));
  }
  std::vector<NodeId> row_copy(rows.begin(), rows.end());
  std::vector<int> label_copy(labels.begin(), labels.end());
  const std::size_t il = logits.id;
  return push("softmax_cross_entropy", Matrix::Constant(1, 1, loss / m), {il},
              [il, row_copy, label_copy, probs, m](const Tape& t, const Matrix& g,
                                                   std::vector<Matrix>& adj) {
                const Matrix& x = t.nodes_[il].value;
                Matrix dx = Matrix::Zero(x.rows(), x.cols());
                for (std::size_t k = 0; k < row_copy.size(); ++k) {
                  RowVector d = probs.row(static_cast<Eigen::Index>(k));
                  d[label_copy[k]] -= 1.0;
                  dx.row(row_copy[k]) += d * (g(0, 0) / m);
                }
                accumulate(adj, il, dx);
              });
}

Var Tape::recon_loss(Var z, std::span<const Edge> positives, std::span<const Edge> negatives) {
  const Matrix& zv = value(z);
  const auto check = [&](const Edge& e) {
    if (e.u < 0 || e.v < 0 || e.u >= zv.rows() || e.v >= zv.rows()) {
      throw AutodiffError("recon_loss: pair index out of range");
    }
  };
  const double denom = positives.empty() ? 1.0 : static_cast<double>(positives.size());
  // d loss / d logit per pair; zero where the probability is clamped.
  std::vector<double> slope_pos(positives.size());
  std::vector<double> slope_neg(negatives.size());
  double loss = 0.0;
  std::uint64_t clamp_hash = 0;
  for (std::size_t k = 0; k < positives.size(); ++k) {
    check(positives[k]);
    const double p = sigmoid(zv.row(positives[k].u).dot(zv.row(positives[k].v)));
    const double c = std::clamp(p, kProbFloor, 1.0 - kProbFloor);
    loss -= std::log(c);
    const bool clamped = c != p;
    slope_pos[k] = clamped ? 0.0 : -(1.0 - p);
    clamp_hash = mix(clamp_hash, clamped ? 1 : 0);
  }
  for (std::size_t k = 0; k < negatives.size(); ++k) {
    check(negatives[k]);
    const double p = sigmoid(zv.row(negatives[k].u).dot(zv.row(negatives[k].v)));
    const double c = std::clamp(p, kProbFloor, 1.0 - kProbFloor);
    loss -= std::log(1.0 - c);
    const bool clamped = c != p;
    slope_neg[k] = clamped ? 0.0 : p;
    clamp_hash = mix(clamp_hash, clamped ? 1 : 0);
  }
  note_branch(clamp_hash);
  std::vector<Edge> pos(positives.begin(), positives.end());
  std::vector<Edge> neg(negatives.begin(), negatives.end());
  const std::size_t iz = z.id;
  return push("recon_loss", Matrix::Constant(1, 1, loss / denom), {iz},
              [iz, pos, neg, slope_pos, slope_neg, denom](const Tape& t, const Matrix& g,
                                                          std::vector<Matrix>& adj) {
                const Matrix& zv = t.nodes_[iz].value;
                Matrix dz = Matrix::Zero(zv.rows(), zv.cols());
                const double scale = g(0, 0) / denom;
                const auto spread = [&](const Edge& e, double slope) {
                  if (slope == 0.0) {
                    return;
                  }
                  dz.row(e.u) += (slope * scale) * zv.row(e.v);
                  dz.row(e.v) += (slope * scale) * zv.row(e.u);
                };
                for (std::size_t k = 0; k < pos.size(); ++k) {
                  spread(pos[k], slope_pos[k]);
                }
                for (std::size_t k = 0; k < neg.size(); ++k) {
                  spread(neg[k], slope_neg[k]);
                }
                accumulate(adj, iz, dz);
              });
}

Var Tape::gaussian_kl(Var mu, Var logvar) {
  const Matrix& m = value(mu);
  const Matrix& lv = value(logvar);
  require_same_shape(m, lv, "gaussian_kl");
  const double n = std::max<double>(1.0, static_cast<double>(m.rows()));
  const double kl =
      -0.5 / n * (1.0 + lv.array() - m.array().square() - lv.array().exp()).sum();
  const std::size_t im = mu.id;
  const std::size_t il = logvar.id;
  return push("gaussian_kl", Matrix::Constant(1, 1, kl), {im, il},
              [im, il, n](const Tape& t, const Matrix& g, std::vector<Matrix>& adj) {
                const double s = g(0, 0) / n;
                if (t.needs(im)) {
                  accumulate(adj, im, t.nodes_[im].value * s);
                }
                if (t.needs(il)) {
                  accumulate(adj, il,
                             ((t.nodes_[il].value.array().exp() - 1.0) * (0.5 * s)).matrix());
                }
              });
}

// ---------------------------------------------------------------------------
// Reverse pass

Gradients Tape::backward(Var root) const {
  const Node& r = node(root);
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw AutodiffError("backward needs a scalar root, got " + std::to_string(r.value.rows()) +
                        "x" + std::to_string(r.value.cols()));
  }
  Gradients out;
  out.adjoints_.resize(nodes_.size());
  out.adjoints_[root.id] = Matrix::Ones(1, 1);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.backward && out.adjoints_[i].size() > 0) {
      n.backward(*this, out.adjoints_[i], out.adjoints_);
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.requires_grad && n.parents.empty() && out.adjoints_[i].size() == 0) {
      out.adjoints_[i] = Matrix::Zero(n.value.rows(), n.value.cols());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Matrix symmetrize(const Matrix& raw) { return 0.5 * (raw + raw.transpose()); }

FiniteDiffReport finite_diff_check(const std::function<Probe(const Matrix&)>& loss,
                                   const Matrix& at, const Matrix& analytic, double epsilon,
                                   const std::function<bool(Eigen::Index, Eigen::Index)>& include) {
  if (!(epsilon > 0.0)) {
    throw AutodiffError("finite_diff_check: epsilon must be positive");
  }
  if (at.rows() != analytic.rows() || at.cols() != analytic.cols()) {
    throw AutodiffError("finite_diff_check: gradient shape differs from the probed leaf");
  }
  FiniteDiffReport report;
  const Probe base = loss(at);
  if (!std::isfinite(base.value)) {
    report.non_finite = true;
    return report;
  }
  Matrix x = at;
  for (Eigen::Index c = 0; c < at.cols(); ++c) {
    for (Eigen::Index r = 0; r < at.rows(); ++r) {
      if (include && !include(r, c)) {
        continue;
      }
      x(r, c) = at(r, c) + epsilon;
      const Probe up = loss(x);
      x(r, c) = at(r, c) - epsilon;
      const Probe down = loss(x);
      x(r, c) = at(r, c);
      if (!std::isfinite(up.value) || !std::isfinite(down.value)) {
        report.non_finite = true;
        continue;
      }
      if (up.branch != base.branch || down.branch != base.branch) {
        ++report.skipped;
        continue;
      }
      const double numeric = (up.value - down.value) / (2.0 * epsilon);
      const double exact = analytic(r, c);
      const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
      const double err = std::abs(exact - numeric) / denom;
      ++report.checked;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_row = r;
        report.worst_col = c;
      }
    }
  }
  return report;
}

}  // namespace lisa::ad
