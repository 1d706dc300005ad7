#include "sgncde/autodiff.hpp"
#include "sgncde/errors.hpp"
#include "sgncde/nn.hpp"
#include "test_support.hpp"

#include <array>

namespace sgncde {
namespace {

using ad::Index;
using ad::Matrix;
using ad::Tensor;
using testing::gradient_check;

constexpr double kTol = 1e-4;

Matrix randn(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Tensor leaf(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  return Tensor::leaf(randn(r, c, rng, scale), true);
}

/// <out, C> for a fixed random C, so every output entry receives a distinct upstream gradient.
Tensor project(const Tensor& out, const Matrix& c) { return ad::sum(ad::mul(out, Tensor::constant(c))); }

/// Ten random instances of a unary or n-ary op, each checked against central differences.
void check_op(const char* name, const std::function<std::vector<Tensor>(std::mt19937_64&)>& make,
              const std::function<Tensor(const std::vector<Tensor>&)>& op) {
  std::mt19937_64 rng(std::hash<std::string>{}(name));
  for (int instance = 0; instance < 10; ++instance) {
    const auto leaves = make(rng);
    const Tensor probe = op(leaves);
    const Matrix c = randn(probe.rows(), probe.cols(), rng);
    const double err = gradient_check(leaves, [&] { return project(op(leaves), c); });
    EXPECT_LT(err, kTol) << name << " instance " << instance;
  }
}

TEST(Ops, ForwardExamples) {
  EXPECT_EQ(ad::elu(Tensor::scalar(0.0)).item(), 0.0);
  EXPECT_EQ(ad::elu(Tensor::scalar(2.5)).item(), 2.5);
  EXPECT_NEAR(ad::elu(Tensor::scalar(-1.0)).item(), std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_NEAR(ad::frobenius_norm(Tensor::constant(Matrix::Identity(3, 3))).item(), std::sqrt(3.0), 1e-15);
  const Tensor p = ad::matmul(Tensor::constant(Matrix::Ones(2, 3)), Tensor::constant(Matrix::Ones(3, 4)));
  EXPECT_EQ(p.rows(), 2);
  EXPECT_EQ(p.cols(), 4);
  EXPECT_EQ(p.value(), Matrix::Constant(2, 4, 3.0));
  EXPECT_NEAR(ad::sigmoid(Tensor::scalar(0.0)).item(), 0.5, 1e-15);
  Matrix r(1, 3);
  r << 1, 2, 3;
  Matrix s(1, 3);
  s << 4, 5, 6;
  Matrix cross(1, 3);
  cross << -3, 6, -3;
  EXPECT_EQ(ad::cross_rows(Tensor::constant(r), Tensor::constant(s)).value(), cross);
  Matrix flat(1, 6);
  flat << 1, 2, 3, 4, 5, 6;
  Matrix two(2, 3);
  two << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(ad::reshape(Tensor::constant(flat), 2, 3).value(), two);
}

TEST(Ops, ShapeErrors) {
  const Tensor a = Tensor::constant(Matrix::Ones(2, 3));
  const Tensor b = Tensor::constant(Matrix::Ones(2, 2));
  EXPECT_THROW(ad::matmul(a, a), ShapeError);
  EXPECT_THROW(ad::add(a, b), ShapeError);
  EXPECT_THROW(ad::mul(a, b), ShapeError);
  EXPECT_THROW(ad::reshape(a, 4, 2), ShapeError);
  EXPECT_THROW(ad::slice_cols(a, 2, 2), ShapeError);
  EXPECT_THROW(ad::add_row(a, b), ShapeError);
}

TEST(Ops, BackwardRequiresScalar) {
  const Tensor a = Tensor::leaf(Matrix::Ones(2, 2), true);
  EXPECT_THROW(ad::scale(a, 2.0).backward(), UsageError);
}

TEST(Ops, SquareDerivative) {
  Tensor x = Tensor::leaf(Matrix::Constant(1, 1, 3.0), true);
  ad::mul(x, x).backward();
  EXPECT_EQ(x.grad()(0, 0), 6.0);
}

TEST(Gradients, EveryOp) {
  auto one = [](Index r, Index c, double scale = 1.0) {
    return [=](std::mt19937_64& rng) { return std::vector<Tensor>{leaf(r, c, rng, scale)}; };
  };
  auto two = [](Index r1, Index c1, Index r2, Index c2) {
    return [=](std::mt19937_64& rng) { return std::vector<Tensor>{leaf(r1, c1, rng), leaf(r2, c2, rng)}; };
  };
  check_op("matmul", two(3, 4, 4, 2), [](auto& v) { return ad::matmul(v[0], v[1]); });
  check_op("add", two(3, 4, 3, 4), [](auto& v) { return ad::add(v[0], v[1]); });
  check_op("sub", two(3, 4, 3, 4), [](auto& v) { return ad::sub(v[0], v[1]); });
  check_op("mul", two(3, 4, 3, 4), [](auto& v) { return ad::mul(v[0], v[1]); });
  check_op("add_row", two(3, 4, 1, 4), [](auto& v) { return ad::add_row(v[0], v[1]); });
  check_op("scale", one(3, 4), [](auto& v) { return ad::scale(v[0], -1.7); });
  check_op("affine", one(3, 4), [](auto& v) { return ad::affine(v[0], 0.3, 2.0); });
  check_op("scale_rows", two(3, 4, 3, 1), [](auto& v) { return ad::scale_rows(v[0], v[1]); });
  check_op(
      "reciprocal",
      [](std::mt19937_64& rng) {
        Matrix m = randn(3, 4, rng);
        m = m.array().sign() * (m.array().abs() + 0.5);
        return std::vector<Tensor>{Tensor::leaf(m, true)};
      },
      [](auto& v) { return ad::reciprocal(v[0]); });
  check_op("elu", one(4, 5, 2.0), [](auto& v) { return ad::elu(v[0]); });
  check_op("sigmoid", one(4, 5, 2.0), [](auto& v) { return ad::sigmoid(v[0]); });
  check_op("tanh", one(4, 5, 2.0), [](auto& v) { return ad::tanh(v[0]); });
  check_op("slice_cols", one(3, 6), [](auto& v) { return ad::slice_cols(v[0], 2, 3); });
  check_op("concat_cols", two(3, 2, 3, 4), [](auto& v) { return ad::concat_cols(std::span<const Tensor>(v)); });
  check_op("concat_rows", two(2, 3, 4, 3), [](auto& v) { return ad::concat_rows(std::span<const Tensor>(v)); });
  check_op("gather_cols", one(3, 4), [](auto& v) {
    const std::array<Index, 5> idx{3, 0, 0, 2, 3};
    return ad::gather_cols(v[0], idx);
  });
  check_op("reshape", one(2, 6), [](auto& v) { return ad::reshape(v[0], 4, 3); });
  check_op("frobenius_norm", one(3, 4), [](auto& v) { return ad::frobenius_norm(v[0]); });
  check_op("row_norms", one(5, 3), [](auto& v) { return ad::row_norms(v[0]); });
  check_op("row_dot", two(5, 3, 5, 3), [](auto& v) { return ad::row_dot(v[0], v[1]); });
  check_op("cross_rows", two(5, 3, 5, 3), [](auto& v) { return ad::cross_rows(v[0], v[1]); });
  check_op("sum", one(3, 4), [](auto& v) { return ad::sum(v[0]); });
  check_op("batched_matvec", two(4, 15, 4, 5), [](auto& v) { return ad::batched_matvec(v[0], v[1], 3, 5); });
  check_op("gram_schmidt_rows", one(4, 6), [](auto& v) { return nn::gram_schmidt_rows(v[0]); });
  check_op("rotation_frobenius_loss", two(4, 9, 4, 9), [](auto& v) { return nn::rotation_frobenius_loss(v[0], v[1]); });
}

TEST(Gradients, SharedSubexpressionsAccumulate) {
  std::mt19937_64 rng(1);
  const Tensor x = leaf(3, 3, rng);
  const Tensor w = leaf(3, 3, rng);
  const double err = gradient_check({x, w}, [&] {
    const Tensor h = ad::tanh(ad::matmul(x, w));
    return ad::sum(ad::mul(h, ad::add(h, x)));
  });
  EXPECT_LT(err, kTol);
}

TEST(Gradients, FourLayerMlp) {
  std::mt19937_64 rng(2);
  nn::MLP mlp("mlp", {6, 16, 16, 16, 5}, rng);
  std::vector<nn::Parameter*> params;
  mlp.collect(params);
  EXPECT_EQ(mlp.parameter_count(), std::size_t((6 + 1) * 16 + (16 + 1) * 16 * 2 + (16 + 1) * 5));
  const Tensor x = leaf(4, 6, rng);
  const Matrix c = randn(4, 5, rng);
  std::vector<Tensor> leaves{x};
  for (auto* p : params) leaves.push_back(p->tensor);
  EXPECT_LT(gradient_check(leaves, [&] { return project(mlp.forward(x), c); }), kTol);
}

/// h' = (1 - z) n + z h with r, z, n from the stacked [r | z | n] input and recurrent maps.
Matrix gru_oracle(const Matrix& x, const Matrix& h, const std::vector<nn::Parameter*>& p) {
  const Matrix gi = (x * p[0]->tensor.value()).rowwise() + p[1]->tensor.value().row(0);
  const Matrix gh = (h * p[2]->tensor.value()).rowwise() + p[3]->tensor.value().row(0);
  const Index H = h.cols();
  auto sig = [](const Matrix& m) { return Matrix((1.0 + (-m.array()).exp()).inverse()); };
  const Matrix r = sig(gi.leftCols(H) + gh.leftCols(H));
  const Matrix z = sig(gi.middleCols(H, H) + gh.middleCols(H, H));
  const Matrix n = (gi.rightCols(H).array() + r.array() * gh.rightCols(H).array()).tanh();
  return (1.0 - z.array()) * n.array() + z.array() * h.array();
}

TEST(Gru, CellMatchesStandardEquations) {
  std::mt19937_64 rng(3);
  nn::GRUCell cell("cell", 4, 6, rng);
  std::vector<nn::Parameter*> p;
  cell.collect(p);
  ASSERT_EQ(p.size(), 4u);
  const Matrix x = randn(3, 4, rng), h = randn(3, 6, rng);
  const Matrix out = cell.forward(Tensor::constant(x), Tensor::constant(h)).value();
  EXPECT_LT((out - gru_oracle(x, h, p)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Gru, GradientOverFiveSteps) {
  std::mt19937_64 rng(4);
  nn::GRUCell cell("cell", 4, 5, rng);
  std::vector<nn::Parameter*> p;
  cell.collect(p);
  std::vector<Tensor> xs;
  for (int t = 0; t < 5; ++t) xs.push_back(leaf(2, 4, rng));
  const Tensor h0 = leaf(2, 5, rng, 0.5);
  const Matrix c = randn(2, 5, rng);
  std::vector<Tensor> leaves{h0};
  for (auto* q : p) leaves.push_back(q->tensor);
  for (const auto& x : xs) leaves.push_back(x);
  const double err = gradient_check(leaves, [&] {
    Tensor h = h0;
    for (const auto& x : xs) h = cell.forward(x, h);
    return project(h, c);
  });
  EXPECT_LT(err, kTol);
}

TEST(Gru, StackOverFiveSteps) {
  std::mt19937_64 rng(5);
  nn::GRUStack stack("gru", 3, 4, 3, rng);
  std::vector<nn::Parameter*> p;
  stack.collect(p);
  EXPECT_EQ(p.size(), 12u);
  std::vector<Tensor> xs;
  for (int t = 0; t < 5; ++t) xs.push_back(leaf(2, 3, rng));
  const Matrix c = randn(2, 4, rng);
  std::vector<Tensor> leaves;
  for (auto* q : p) leaves.push_back(q->tensor);
  const double err = gradient_check(leaves, [&] {
    auto h = stack.initial_state(2);
    for (const auto& x : xs) h = stack.step(x, h);
    return project(h.back(), c);
  });
  EXPECT_LT(err, kTol);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  nn::Parameter p("p", Matrix::Constant(2, 2, 1.5));
  p.tensor.accumulate_grad(Matrix::Zero(2, 2));
  nn::Adam opt;
  opt.step({&p});
  EXPECT_EQ(p.tensor.value(), Matrix::Constant(2, 2, 1.5));
}

TEST(Adam, FirstStepMovesByLr) {
  nn::Parameter p("p", Matrix::Constant(1, 1, 2.0));
  p.tensor.accumulate_grad(Matrix::Constant(1, 1, 1.0));
  nn::Adam opt(nn::AdamConfig{.lr = 0.1});
  opt.step({&p});
  // m_hat = 1, v_hat = 1: the update is lr / (1 + eps).
  EXPECT_NEAR(p.tensor.value()(0, 0), 2.0 - 0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, MatchesReferenceRecursion) {
  nn::Parameter p("p", Matrix::Constant(1, 1, 1.0));
  nn::Adam opt(nn::AdamConfig{.lr = 0.05});
  double x = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 200; ++t) {
    const double g = 2.0 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.05 * (m / (1.0 - std::pow(0.9, t))) / (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
    nn::zero_grad({&p});
    const Tensor loss = ad::mul(p.tensor, p.tensor);
    loss.backward();
    opt.step({&p});
    ASSERT_NEAR(p.tensor.value()(0, 0), x, 1e-12) << t;
  }
}

TEST(Adam, QuadraticBowl) {
  nn::Parameter p("p", Matrix::Constant(1, 1, 1.0));
  nn::Adam opt(nn::AdamConfig{.lr = 0.05});
  for (int t = 0; t < 200; ++t) {
    nn::zero_grad({&p});
    ad::mul(p.tensor, p.tensor).backward();
    opt.step({&p});
  }
  EXPECT_LT(std::abs(p.tensor.value()(0, 0)), 1e-3);
}

TEST(Tape, DeterministicReplay) {
  auto run = [] {
    std::mt19937_64 rng(6);
    nn::MLP mlp("mlp", {5, 8, 8, 3}, rng);
    const Tensor x = Tensor::constant(randn(7, 5, rng));
    const Tensor loss = ad::frobenius_norm(ad::tanh(mlp.forward(x)));
    loss.backward();
    std::vector<nn::Parameter*> p;
    mlp.collect(p);
    return std::make_pair(loss.item(), p[0]->tensor.grad());
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Tape, NoGradientIntoFrozenTensors) {
  std::mt19937_64 rng(7);
  Tensor frozen = Tensor::leaf(randn(3, 3, rng), false);
  Tensor live = leaf(3, 3, rng);
  const Tensor c = Tensor::constant(randn(3, 3, rng));
  ad::sum(ad::mul(ad::matmul(frozen, live), c)).backward();
  EXPECT_FALSE(frozen.has_grad());
  EXPECT_EQ(frozen.grad(), Matrix::Zero(3, 3));
  EXPECT_TRUE(live.has_grad());
  EXPECT_THROW(frozen.accumulate_grad(Matrix::Ones(3, 3)), UsageError);
}

TEST(Tape, NoGradGuardStopsRecording) {
  std::mt19937_64 rng(8);
  Tensor x = leaf(2, 2, rng);
  {
    ad::NoGradGuard guard;
    EXPECT_FALSE(ad::grad_enabled());
    const Tensor y = ad::sum(ad::mul(x, x));
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(ad::grad_enabled());
}

TEST(Tape, GradientsAccumulateUntilZeroed) {
  Tensor x = Tensor::leaf(Matrix::Constant(1, 1, 2.0), true);
  ad::scale(x, 3.0).backward();
  ad::scale(x, 3.0).backward();
  EXPECT_EQ(x.grad()(0, 0), 6.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()(0, 0), 0.0);
}

TEST(Tape, LeafMutationOnlyForLeaves) {
  Tensor x = Tensor::leaf(Matrix::Ones(1, 1), true);
  EXPECT_NO_THROW(x.mutable_value());
  Tensor y = ad::scale(x, 2.0);
  EXPECT_THROW(y.mutable_value(), UsageError);
}

}  // namespace
}  // namespace sgncde
