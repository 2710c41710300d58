#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "lisa/autodiff.hpp"
#include "lisa/models.hpp"

using namespace lisa;
using lisa::ad::Probe;
using lisa::ad::Tape;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(Autodiff, SumHasUnitGradient) {
  Tape t;
  const auto x = t.variable(random_matrix(3, 4, 1));
  const auto g = t.backward(t.sum(x));
  EXPECT_TRUE(g.of(x).isApprox(Matrix::Ones(3, 4)));
}

TEST(Autodiff, SquaredNorm) {
  Tape t;
  Matrix v(1, 2);
  v << 1, 2;
  const auto x = t.variable(v);
  const auto root = t.squared_norm(x);
  EXPECT_DOUBLE_EQ(t.scalar(root), 5.0);
  Matrix expected(1, 2);
  expected << 2, 4;
  EXPECT_TRUE(t.backward(root).of(x).isApprox(expected));
}

TEST(Autodiff, ConstantLossGivesZeroGradient) {
  Tape t;
  const auto x = t.variable(random_matrix(2, 2, 3));
  const auto c = t.constant(random_matrix(2, 2, 4));
  const auto g = t.backward(t.sum(c));
  EXPECT_EQ(g.of(x).norm(), 0.0);
}

TEST(Autodiff, RejectsNonScalarRoot) {
  Tape t;
  const auto x = t.variable(random_matrix(2, 2, 3));
  EXPECT_THROW(t.backward(x), ad::AutodiffError);
}

TEST(Autodiff, DecoderGradientIsSigmoidSlopeTimesPartner) {
  // Single positive, no negatives: loss = -log sigma(z_i . z_j).
  Tape t;
  const Matrix z0 = random_matrix(2, 3, 5) * 0.3;
  const auto z = t.variable(z0);
  const Edge pos[] = {{0, 1}};
  const auto root = t.recon_loss(z, pos, {});
  const double s = sig(z0.row(0).dot(z0.row(1)));
  const Matrix g = t.backward(root).of(z);
  // d(-log s)/dz_0 = -(1 - s) z_1 = -(s (1 - s) / s) z_1
  EXPECT_TRUE(g.row(0).isApprox(-(1.0 - s) * z0.row(1), 1e-10));
  EXPECT_TRUE(g.row(1).isApprox(-(1.0 - s) * z0.row(0), 1e-10));
}

TEST(Autodiff, ElementwiseOpsMatchFiniteDifferences) {
  const Matrix a0 = random_matrix(3, 3, 6);
  const Matrix b0 = random_matrix(3, 2, 7);
  auto eval = [&](const Matrix& a, Matrix* grad) {
    Tape t;
    const auto va = t.variable(a);
    const auto vb = t.constant(b0);
    const auto h = t.softplus(t.matmul(va, vb));
    const auto e = t.exp(t.scale(h, -0.5));
    const auto root = t.sum(t.hadamard(t.add(h, e), e));
    if (grad != nullptr) *grad = t.backward(root).of(va);
    return t.scalar(root);
  };
  Matrix grad;
  eval(a0, &grad);
  const auto rep = ad::finite_diff_check(
      [&](const Matrix& a) { return Probe{eval(a, nullptr), 0}; }, a0, grad, 1e-5);
  EXPECT_EQ(rep.checked, 9u);
  EXPECT_LT(rep.max_relative_error, 1e-6);
}

TEST(Autodiff, TwoLayerGcnCrossEntropyMatchesFiniteDifferences) {
  const Graph g = fixture::random_graph(6, 4, 3, 11);
  const ModelGraph view = model_graph(g);
  Rng rng(2);
  const ClassifierParams p = init_classifier(ClassifierArch::gcn, 4, 3, rng, 5);
  const std::vector<NodeId> nodes{0, 2, 5};
  auto eval = [&](const Matrix& w0, Matrix* grad, std::uint64_t* branch) {
    Tape t;
    t.set_track_branches(true);
    const TapeGraph tg = bind_graph(t, view, false, false);
    std::vector<ad::Var> w{t.variable(w0), t.variable(p.weights[1])};
    const auto logits = classifier_forward(t, tg, p, w);
    const std::vector<int> y{g.labels()[0], g.labels()[2], g.labels()[5]};
    const auto root = t.softmax_cross_entropy(logits, nodes, y);
    if (grad != nullptr) *grad = t.backward(root).of(w[0]);
    if (branch != nullptr) *branch = t.branch_signature();
    return t.scalar(root);
  };
  Matrix grad;
  eval(p.weights[0], &grad, nullptr);
  const auto rep = ad::finite_diff_check(
      [&](const Matrix& w) {
        std::uint64_t b = 0;
        const double v = eval(w, nullptr, &b);
        return Probe{v, b};
      },
      p.weights[0], grad, 1e-6);
  EXPECT_GT(rep.checked, 0u);
  EXPECT_LT(rep.max_relative_error, 1e-4);
}

TEST(Autodiff, AttackLossOnEightNodesMatchesFiniteDifferences) {
  auto inst = fixture::loss_instance(21, 6, 2);
  const AttackLossResult r = attack_loss(inst->inputs());
  const auto feat = ad::finite_diff_check(
      [&](const Matrix& f) { return inst->probe_features(f); }, inst->link.payload_features,
      r.grad_features, 1e-5);
  EXPECT_GT(feat.checked, 0u);
  EXPECT_LT(feat.max_relative_error, 1e-4);
  const Matrix block_grad = r.cls_adjacency + inst->alpha * r.link_adjacency;
  const auto block = ad::finite_diff_check(
      [&](const Matrix& a) { return inst->probe_block(a); }, inst->link.payload_block, block_grad,
      1e-5, [](Eigen::Index i, Eigen::Index j) { return i != j; });
  EXPECT_GT(block.checked, 0u);
  EXPECT_LT(block.max_relative_error, 1e-4);
}

TEST(FiniteDiff, ExactForLinearAndAccurateForQuadratic) {
  const Matrix c = random_matrix(2, 3, 8);
  const Matrix x0 = random_matrix(2, 3, 9);
  const auto lin = ad::finite_diff_check(
      [&](const Matrix& x) { return Probe{(c.array() * x.array()).sum(), 0}; }, x0, c, 1e-3);
  EXPECT_LT(lin.max_relative_error, 1e-9);
  const auto quad = ad::finite_diff_check(
      [&](const Matrix& x) { return Probe{x.squaredNorm(), 0}; }, x0, 2.0 * x0, 1e-4);
  EXPECT_LT(quad.max_relative_error, 1e-6);
  EXPECT_EQ(quad.checked, 6u);
}

TEST(FiniteDiff, ReluKinkIsSkipped) {
  Matrix x0(1, 2);
  x0 << 1e-9, 1.0;
  auto eval = [](const Matrix& x, Matrix* grad) {
    Tape t;
    t.set_track_branches(true);
    const auto v = t.variable(x);
    const auto root = t.sum(t.relu(v));
    if (grad != nullptr) *grad = t.backward(root).of(v);
    return Probe{t.scalar(root), t.branch_signature()};
  };
  Matrix grad;
  eval(x0, &grad);
  const auto rep = ad::finite_diff_check([&](const Matrix& x) { return eval(x, nullptr); }, x0,
                                         grad, 1e-6);
  EXPECT_EQ(rep.skipped, 1u);
  EXPECT_EQ(rep.checked, 1u);
  EXPECT_LT(rep.max_relative_error, 1e-9);
}

TEST(Autodiff, LinearInLossAndDeterministic) {
  const Matrix x0 = random_matrix(3, 2, 10);
  auto grad = [&](double s1, double s2) {
    Tape t;
    const auto x = t.variable(x0);
    const auto f = t.sum(t.softplus(x));
    const auto h = t.squared_norm(t.relu(x));
    return Matrix(t.backward(t.add(t.scale(f, s1), t.scale(h, s2))).of(x));
  };
  const Matrix gf = grad(1, 0);
  const Matrix gh = grad(0, 1);
  EXPECT_TRUE(grad(2.5, -1.5).isApprox(2.5 * gf - 1.5 * gh, 1e-12));
  EXPECT_EQ(grad(1, 1), grad(1, 1));
}

TEST(Autodiff, SymmetrizeAveragesTranspose) {
  Matrix a(2, 2);
  a << 0, 2, 4, 0;
  EXPECT_DOUBLE_EQ(ad::symmetrize(a)(0, 1), 3.0);
  EXPECT_DOUBLE_EQ(ad::symmetrize(a)(1, 0), 3.0);
}
