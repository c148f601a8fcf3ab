#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "revcd/autodiff.hpp"
#include "revcd/optim.hpp"
#include "revcd/rng.hpp"
#include "revcd/tensor.hpp"

using namespace revcd;

namespace {

Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  Tensor<double> c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

}  // namespace

TEST(Tensor, RejectsInconsistentDims) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_THROW(Tensor<float>({0, 3}), ShapeError);
  EXPECT_THROW(Tensor<float>::matrix({{1, 2}, {3}}), ShapeError);
}

TEST(Tensor, RequireFiniteFlagsNanAndInf) {
  Tensor<double> t({3}, 1.0);
  EXPECT_NO_THROW(require_finite(t, "ok"));
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(require_finite(t, "nan"), NumericError);
  t[1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(require_finite(t, "inf"), NumericError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const auto eye = Tensor<double>::matrix({{1, 0}, {0, 1}});
  const auto m = Tensor<double>::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(kernels::matmul(eye, m), m);
}

TEST(Matmul, RowTimesColumn) {
  const auto c = kernels::matmul(Tensor<double>::matrix({{1, 2}}), Tensor<double>::matrix({{3}, {4}}));
  EXPECT_EQ(c, Tensor<double>::matrix({{11}}));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(1);
  const auto a = sample_gaussian<double>({5, 7}, rng);
  const auto b = sample_gaussian<double>({7, 3}, rng);
  const auto c = kernels::matmul(a, b);
  const auto ref = naive_matmul(a, b);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);
}

TEST(Matmul, TransposedVariantsMatchExplicitTranspose) {
  Rng rng(2);
  const auto a = sample_gaussian<double>({4, 3}, rng);
  const auto b = sample_gaussian<double>({4, 5}, rng);
  Tensor<double> at({3, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) at(j, i) = a(i, j);
  const auto tn = kernels::matmul_tn(a, b);
  const auto ref = naive_matmul(at, b);
  for (std::size_t i = 0; i < tn.size(); ++i) EXPECT_NEAR(tn[i], ref[i], 1e-12);

  const auto c = sample_gaussian<double>({6, 3}, rng);
  Tensor<double> ct({3, 6});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 3; ++j) ct(j, i) = c(i, j);
  const auto nt = kernels::matmul_nt(a, c);
  const auto ref2 = naive_matmul(a, ct);
  for (std::size_t i = 0; i < nt.size(); ++i) EXPECT_NEAR(nt[i], ref2[i], 1e-12);
}

TEST(Matmul, InnerDimMismatchThrows) {
  EXPECT_THROW(kernels::matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), ShapeError);
}

TEST(Elementwise, HadamardWithZerosIsZero) {
  const auto r = kernels::elementwise(kernels::Elementwise::hadamard, Tensor<double>::vector({1, 2, 3}),
                                      Tensor<double>::vector({0, 0, 0}));
  EXPECT_EQ(r, Tensor<double>::vector({0, 0, 0}));
}

TEST(Elementwise, Relu) {
  EXPECT_EQ(kernels::relu(Tensor<double>::vector({-1, 0, 2})), Tensor<double>::vector({0, 0, 2}));
}

TEST(Elementwise, AddZeroIsExactIdentity) {
  Rng rng(3);
  const auto a = sample_gaussian<float>({4, 5}, rng);
  EXPECT_EQ(kernels::elementwise(kernels::Elementwise::add, a, Tensor<float>::scalar(0.0f)), a);
  EXPECT_EQ(kernels::elementwise(kernels::Elementwise::add, a, Tensor<float>({4, 5}, 0.0f)), a);
}

TEST(Elementwise, ScaleAndSub) {
  const auto a = Tensor<double>::vector({1, -2, 4});
  EXPECT_EQ(kernels::scale(a, 0.5), Tensor<double>::vector({0.5, -1, 2}));
  EXPECT_EQ(kernels::elementwise(kernels::Elementwise::sub, a, a), Tensor<double>::vector({0, 0, 0}));
}

TEST(Elementwise, DimMismatchThrows) {
  EXPECT_THROW(kernels::elementwise(kernels::Elementwise::add, Tensor<double>({2, 3}), Tensor<double>({3, 2})),
               ShapeError);
}

TEST(BatchNorm, ConstantColumnMapsToZero) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::matrix({{5, 1}, {5, 2}, {5, 3}}));
  auto gamma = tape.leaf(Tensor<double>({2}, 1.0));
  auto beta = tape.leaf(Tensor<double>({2}, 0.0));
  BatchNormStats<double> stats(2);
  const auto y = ad::batch_norm(x, gamma, beta, stats, true).value();
  for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(y(r, 0), 0.0);
}

TEST(BatchNorm, TrainingOutputIsStandardized) {
  Rng rng(4);
  Tape<double> tape;
  auto xv = sample_gaussian<double>({32, 6}, rng);
  for (auto& v : xv.data()) v = 3.0 * v + 7.0;
  auto x = tape.leaf(xv);
  auto gamma = tape.leaf(Tensor<double>({6}, 1.0));
  auto beta = tape.leaf(Tensor<double>({6}, 0.0));
  BatchNormStats<double> stats(6);
  const auto y = ad::batch_norm(x, gamma, beta, stats, true).value();
  for (std::size_t c = 0; c < 6; ++c) {
    double mean = 0, var = 0;
    for (std::size_t r = 0; r < 32; ++r) mean += y(r, c);
    mean /= 32;
    for (std::size_t r = 0; r < 32; ++r) var += (y(r, c) - mean) * (y(r, c) - mean);
    var /= 32;
    EXPECT_NEAR(mean, 0.0, 1e-6);
    // The epsilon stabilizer shrinks the variance by var / (var + eps).
    EXPECT_NEAR(var, 1.0, 1e-5);
  }
}

TEST(BatchNorm, RunningStatsUseMomentum) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::matrix({{1}, {3}}));
  auto gamma = tape.leaf(Tensor<double>({1}, 1.0));
  auto beta = tape.leaf(Tensor<double>({1}, 0.0));
  BatchNormStats<double> stats(1);
  ad::batch_norm(x, gamma, beta, stats, true);
  EXPECT_NEAR(stats.running_mean[0], 0.1 * 2.0, 1e-15);
  // Unbiased batch variance of {1, 3} is 2.
  EXPECT_NEAR(stats.running_var[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-15);
}

TEST(BatchNorm, InferenceIsDeterministicAffineMap) {
  Rng rng(5);
  const auto xv = sample_gaussian<double>({4, 3}, rng);
  BatchNormStats<double> stats(3);
  stats.running_mean = Tensor<double>::vector({0.5, -1, 2});
  stats.running_var = Tensor<double>::vector({4, 1, 0.25});
  Tape<double> tape(false);
  auto x = tape.leaf(xv);
  auto gamma = tape.leaf(Tensor<double>::vector({2, 1, 1}));
  auto beta = tape.leaf(Tensor<double>::vector({0, 1, 0}));
  const auto y1 = ad::batch_norm(x, gamma, beta, stats, false).value();
  const auto y2 = ad::batch_norm(x, gamma, beta, stats, false).value();
  EXPECT_EQ(y1, y2);
  EXPECT_NEAR(y1(0, 0), 2.0 * (xv(0, 0) - 0.5) / std::sqrt(4.0 + kBatchNormEps), 1e-12);
  // Running stats are untouched in inference mode.
  EXPECT_EQ(stats.running_mean, Tensor<double>::vector({0.5, -1, 2}));
}

TEST(BatchNorm, TrainingNeedsTwoRows) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1, 3}, 1.0));
  auto gamma = tape.leaf(Tensor<double>({3}, 1.0));
  auto beta = tape.leaf(Tensor<double>({3}, 0.0));
  BatchNormStats<double> stats(3);
  EXPECT_THROW(ad::batch_norm(x, gamma, beta, stats, true), ShapeError);
}

TEST(LayerNorm, RowsAreStandardized) {
  Rng rng(6);
  Tape<double> tape;
  auto x = tape.leaf(sample_gaussian<double>({5, 16}, rng));
  auto gamma = tape.leaf(Tensor<double>({16}, 1.0));
  auto beta = tape.leaf(Tensor<double>({16}, 0.0));
  const auto y = ad::layer_norm(x, gamma, beta).value();
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0, var = 0;
    for (auto v : y.row(r)) mean += v;
    mean /= 16;
    for (auto v : y.row(r)) var += (v - mean) * (v - mean);
    var /= 16;
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(Attention, WeightsAreRowStochastic) {
  Rng rng(7);
  Tape<double> tape;
  const std::size_t b = 3, group = 4, heads = 2, d = 8;
  auto q = tape.leaf(sample_gaussian<double>({b * group, d}, rng));
  auto k = tape.leaf(sample_gaussian<double>({b * group, d}, rng));
  auto v = tape.leaf(sample_gaussian<double>({b * group, d}, rng));
  std::vector<double> w;
  ad::attention(q, k, v, group, heads, &w);
  ASSERT_EQ(w.size(), b * heads * group * group);
  for (std::size_t row = 0; row < b * heads * group; ++row) {
    double sum = 0.0;
    for (std::size_t j = 0; j < group; ++j) {
      EXPECT_GE(w[row * group + j], 0.0);
      sum += w[row * group + j];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Dropout, ZeroRateIsAllOnes) {
  Rng rng(8);
  const auto m = dropout_mask<float>({10, 10}, 0.0, rng);
  for (auto v : m.data()) EXPECT_EQ(v, 1.0f);
}

TEST(Dropout, MaskHasUnitMean) {
  Rng rng(9);
  const auto m = dropout_mask<double>({1000000}, 0.5, rng);
  double mean = 0.0;
  for (auto v : m.data()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    mean += v;
  }
  mean /= static_cast<double>(m.size());
  EXPECT_GE(mean, 0.99);
  EXPECT_LE(mean, 1.01);
}

TEST(Dropout, SameStateSameMask) {
  Rng a(10), b(10);
  EXPECT_EQ(dropout_mask<float>({50}, 0.3, a), dropout_mask<float>({50}, 0.3, b));
}

TEST(Dropout, RateOfOneIsRejected) {
  Rng rng(11);
  EXPECT_THROW(dropout_mask<float>({4}, 1.0, rng), ShapeError);
  EXPECT_THROW(dropout_mask<float>({4}, -0.1, rng), ShapeError);
}

TEST(Backward, QuadraticGradient) {
  Tape<double> tape;
  auto w = tape.leaf(Tensor<double>::vector({1, 2}), true);
  const auto loss = ad::sum(ad::hadamard(w, w));
  tape.backward(loss);
  EXPECT_EQ(tape.grad(w), Tensor<double>::vector({2, 4}));
}

TEST(Backward, DisconnectedLeafGetsZeroGradient) {
  Tape<double> tape;
  auto w = tape.leaf(Tensor<double>::vector({1, 2}), true);
  auto u = tape.leaf(Tensor<double>::matrix({{3, 4}, {5, 6}}), true);
  tape.backward(ad::sum(ad::hadamard(w, w)));
  EXPECT_EQ(tape.grad(u), Tensor<double>({2, 2}, 0.0));
}

TEST(Backward, NonScalarLossThrows) {
  Tape<double> tape;
  auto w = tape.leaf(Tensor<double>::vector({1, 2}), true);
  EXPECT_THROW(tape.backward(ad::scale(w, 2.0)), ShapeError);
}

TEST(Backward, TwoLayerMlpMatchesFiniteDifferences) {
  Rng rng(12);
  const auto x = sample_gaussian<double>({6, 4}, rng);
  const auto y = sample_gaussian<double>({6, 2}, rng);
  std::vector<Tensor<double>> params = {sample_gaussian<double>({4, 5}, rng), sample_gaussian<double>({5}, rng),
                                        sample_gaussian<double>({5, 2}, rng), sample_gaussian<double>({2}, rng)};
  auto forward = [&](Tape<double>& tape, std::vector<Var<double>>& p) {
    p.clear();
    for (const auto& t : params) p.push_back(tape.leaf(t, true));
    auto h = ad::relu(ad::add_bias(ad::matmul(tape.constant(x), p[0]), p[1]));
    auto out = ad::add_bias(ad::matmul(h, p[2]), p[3]);
    auto d = ad::sub(out, tape.constant(y));
    return ad::mean(ad::hadamard(d, d));
  };
  Tape<double> tape;
  std::vector<Var<double>> p;
  tape.backward(forward(tape, p));
  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto grad = tape.grad(p[i]);
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      const double orig = params[i][j];
      params[i][j] = orig + h;
      Tape<double> t1;
      std::vector<Var<double>> p1;
      const double up = forward(t1, p1).value().item();
      params[i][j] = orig - h;
      Tape<double> t2;
      const double down = forward(t2, p1).value().item();
      params[i][j] = orig;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(numeric - grad[j]) / std::max({std::abs(numeric), std::abs(grad[j]), 1e-8}));
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Backward, EveryTrainableLeafGetsGradientOfSameDims) {
  Tape<double> tape;
  auto a = tape.leaf(Tensor<double>({2, 3}, 0.5), true);
  auto b = tape.leaf(Tensor<double>({3, 4}, 0.25), true);
  tape.backward(ad::sum(ad::matmul(a, b)));
  EXPECT_EQ(tape.grad(a).dims(), (Dims{2, 3}));
  EXPECT_EQ(tape.grad(b).dims(), (Dims{3, 4}));
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  Adam<double> adam(AdamConfig{0.1});
  Tensor<double> p = Tensor<double>::vector({1, -2, 3});
  const auto before = p;
  std::vector<Tensor<double>*> params{&p};
  std::vector<Tensor<double>> grads{Tensor<double>({3}, 0.0)};
  for (int i = 0; i < 3; ++i) adam.step(params, grads);
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepMatchesClosedForm) {
  // m_hat = g and v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
  const AdamConfig cfg{0.1};
  Adam<double> adam(cfg);
  Tensor<double> p({1}, 0.5);
  std::vector<Tensor<double>*> params{&p};
  std::vector<Tensor<double>> grads{Tensor<double>({1}, 1.0)};
  adam.step(params, grads);
  EXPECT_NEAR(p[0], 0.5 - 0.1 / (1.0 + cfg.eps), 1e-12);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, SecondStepMatchesClosedForm) {
  const AdamConfig cfg{0.01};
  Adam<double> adam(cfg);
  Tensor<double> p({1}, 0.0);
  std::vector<Tensor<double>*> params{&p};
  adam.step(params, std::vector<Tensor<double>>{Tensor<double>({1}, 1.0)});
  adam.step(params, std::vector<Tensor<double>>{Tensor<double>({1}, -2.0)});
  const double m1 = 0.1, v1 = 0.001;
  const double m2 = 0.9 * m1 + 0.1 * -2.0, v2 = 0.999 * v1 + 0.001 * 4.0;
  const double mh = m2 / (1 - 0.81), vh = v2 / (1 - 0.999 * 0.999);
  const double expected = -0.01 / (1 + cfg.eps) - 0.01 * mh / (std::sqrt(vh) + cfg.eps);
  EXPECT_NEAR(p[0], expected, 1e-12);
}

TEST(Adam, IdenticalStateGivesIdenticalResult) {
  auto run = [] {
    Adam<float> adam(AdamConfig{0.05});
    Tensor<float> p = Tensor<float>::vector({0.3f, -0.7f});
    std::vector<Tensor<float>*> params{&p};
    for (int i = 0; i < 5; ++i) adam.step(params, std::vector<Tensor<float>>{Tensor<float>::vector({0.1f * i, -1})});
    return p;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, GradientDimMismatchThrows) {
  Adam<double> adam;
  Tensor<double> p({3}, 0.0);
  std::vector<Tensor<double>*> params{&p};
  EXPECT_THROW(adam.step(params, std::vector<Tensor<double>>{Tensor<double>({2}, 0.0)}), ShapeError);
}

TEST(Gaussian, MomentsMatchStandardNormal) {
  Rng rng(13);
  const auto z = sample_gaussian<double>({1000000}, rng);
  double mean = 0, var = 0;
  for (auto v : z.data()) mean += v;
  mean /= static_cast<double>(z.size());
  for (auto v : z.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(z.size());
  EXPECT_LE(std::abs(mean), 0.01);
  EXPECT_LE(std::abs(var - 1.0), 0.01);
}

TEST(Gaussian, SameStateSameDraws) {
  Rng a(RngState{14, 37}), b(RngState{14, 37});
  EXPECT_EQ(sample_gaussian<float>({20}, a), sample_gaussian<float>({20}, b));
  EXPECT_EQ(a.state(), b.state());
}

TEST(Gaussian, DifferentCountersDiffer) {
  Rng a(RngState{15, 0}), b(RngState{15, 1000});
  EXPECT_NE(sample_gaussian<float>({20}, a), sample_gaussian<float>({20}, b));
}

TEST(Rng, DrawsAdvanceCounterAndReplay) {
  Rng rng(16);
  rng.next_u64();
  const auto saved = rng.state();
  const auto v = rng.next_u64();
  EXPECT_GT(rng.state().counter, saved.counter);
  Rng replay(saved);
  EXPECT_EQ(replay.next_u64(), v);
}

TEST(Rng, UniformRangeAndForkIndependence) {
  Rng rng(17);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LE(u, 1.0);
    ASSERT_LT(rng.uniform_int(7), 7u);
  }
  const auto before = rng.state();
  Rng c1 = rng.fork(1), c2 = rng.fork(2);
  EXPECT_EQ(rng.state(), before);
  EXPECT_NE(c1.next_u64(), c2.next_u64());
  EXPECT_EQ(Rng(17).fork(1).next_u64(), Rng(17).fork(1).next_u64());
}
