#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "revcd/model.hpp"
#include "revcd/training.hpp"
#include "test_util.hpp"

using namespace revcd;
using test::tiny_config;

namespace {

double group_grad_norm(const Denoiser<double>& model, const Tape<double>& tape,
                       const Denoiser<double>::Bound& bound, const char* group) {
  double sq = 0.0;
  for (auto i : model.group(group))
    for (auto g : tape.grad(bound.p[i]).data()) sq += g * g;
  return std::sqrt(sq);
}

StepBatch<double> random_batch(const DenoiserConfig& cfg, const NoiseSchedule& schedule, std::size_t b, double p,
                               Rng& rng) {
  Tensor<double> s({b, cfg.d_s});
  for (auto& v : s.data()) v = rng.uniform();
  const auto x = sample_gaussian<double>({b, cfg.d_x}, rng);
  std::vector<std::size_t> labels(b);
  for (auto& l : labels) l = rng.uniform_int(cfg.n_seen_classes);
  return draw_step_batch(s, x, labels, schedule, p, rng);
}

}  // namespace

TEST(DenoiserConfig, Validation) {
  auto c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.d_x = 15;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.d_t = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.hidden.clear();
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Denoiser, ParametersAreFiniteNamedAndMirrored) {
  const auto cfg = tiny_config();
  Denoiser<double> model(cfg, 1);
  const auto& p = model.params();
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_TRUE(p[i].all_finite()) << p.name(i);
  EXPECT_EQ(p[p.index("null.embedding")].dims(), (Dims{cfg.d_c}));
  EXPECT_EQ(p[p.index("layers.enc0.fc.w")].dims(), (Dims{cfg.d_s, 32}));
  EXPECT_EQ(p[p.index("layers.dec0.fc.w")].dims(), (Dims{8, 16}));
  EXPECT_EQ(p[p.index("layers.dec1.fc.w")].dims(), (Dims{16, 32}));
  EXPECT_THROW(p.index("layers.dec2.fc.w"), std::exception);
  EXPECT_EQ(p[p.index("layers.out.w")].dims(), (Dims{32, cfg.d_s}));
  EXPECT_EQ(p[p.index("classifier.head.w")].dims(), (Dims{cfg.d_s, cfg.n_seen_classes}));
  EXPECT_EQ(p[p.index("time_proj.enc1.w")].dims(), (Dims{cfg.d_t, 16}));
  EXPECT_EQ(p[p.index("cond_proj.dec0.w")].dims(), (Dims{cfg.d_c, 16}));
  for (const char* g : {"layers", "time_proj", "cond_proj", "msa", "null", "classifier"})
    EXPECT_FALSE(model.group(g).empty()) << g;
  EXPECT_THROW(model.group("nope"), ShapeError);
}

TEST(Denoiser, SameSeedSameInit) {
  Denoiser<float> a(tiny_config(), 5), b(tiny_config(), 5), c(tiny_config(), 6);
  EXPECT_EQ(a.params().values(), b.params().values());
  EXPECT_NE(a.params().values(), c.params().values());
}

TEST(EncodeCondition, OutputShape) {
  const auto cfg = tiny_config();
  Denoiser<double> model(cfg, 2);
  Rng rng(3);
  for (std::size_t b : {1u, 5u}) {
    const auto c = model.encode_condition(sample_gaussian<double>({b, cfg.d_x}, rng));
    EXPECT_EQ(c.dims(), (Dims{b, cfg.d_c}));
  }
  EXPECT_THROW(model.encode_condition(Tensor<double>({2, 12})), ShapeError);
}

TEST(EncodeCondition, RowPermutationEquivariance) {
  const auto cfg = tiny_config();
  Denoiser<double> model(cfg, 4);
  Rng rng(5);
  const auto x = sample_gaussian<double>({4, cfg.d_x}, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  const auto c = model.encode_condition(x);
  const auto cp = model.encode_condition(x.rows_subset(perm));
  EXPECT_EQ(cp, c.rows_subset(perm));
}

TEST(EncodeCondition, AttentionRowsSumToOne) {
  const auto cfg = tiny_config();
  Denoiser<double> model(cfg, 6);
  Rng rng(7);
  std::vector<double> w;
  model.encode_condition(sample_gaussian<double>({3, cfg.d_x}, rng), &w);
  const std::size_t k = cfg.n_tokens;
  ASSERT_EQ(w.size(), 3 * cfg.n_heads * k * k);
  for (std::size_t row = 0; row < w.size() / k; ++row) {
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += w[row * k + j];
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Denoise, OutputShapeAndDeterminism) {
  const auto cfg = tiny_config();
  Denoiser<double> model(cfg, 8);
  Rng rng(9);
  const auto x = sample_gaussian<double>({5, cfg.d_x}, rng);
  const auto st = sample_gaussian<double>({5, cfg.d_s}, rng);
  const std::vector<int> t{1, 2, 10, 40, 50};
  const auto cond = model.encode_condition(x);
  const auto a = model.denoise(st, t, cond, {});
  EXPECT_EQ(a.dims(), (Dims{5, cfg.d_s}));
  EXPECT_EQ(model.denoise(st, t, cond, {}), a);
  const std::vector<int> bad{1, 2};
  EXPECT_THROW(model.denoise(st, bad, cond, {}), ShapeError);
}

TEST(Denoise, MaskedRowEqualsExplicitNullCondition) {
  const auto cfg = tiny_config();
  Denoiser<double> model(cfg, 10);
  Rng rng(11);
  const auto x = sample_gaussian<double>({3, cfg.d_x}, rng);
  const auto st = sample_gaussian<double>({3, cfg.d_s}, rng);
  const std::vector<int> t{5, 17, 33};
  const auto cond = model.encode_condition(x);
  const std::vector<std::uint8_t> mask{0, 1, 0};
  const auto masked = model.denoise(st, t, cond, mask);

  auto explicit_cond = cond;
  const auto& null = model.params()[model.params().index("null.embedding")];
  std::copy(null.data().begin(), null.data().end(), explicit_cond.row(1).begin());
  EXPECT_EQ(masked, model.denoise(st, t, explicit_cond, {}));
  // The mask changes the masked row and nothing else.
  const auto unmasked = model.denoise(st, t, cond, {});
  EXPECT_NE(std::vector<double>(masked.row(1).begin(), masked.row(1).end()),
            std::vector<double>(unmasked.row(1).begin(), unmasked.row(1).end()));
}

TEST(Denoise, FusionIsAsymmetric) {
  const auto cfg = tiny_config();
  Denoiser<double> model(cfg, 12);
  Rng rng(13);
  const auto x = sample_gaussian<double>({4, cfg.d_x}, rng);
  const auto st = sample_gaussian<double>({4, cfg.d_s}, rng);
  const std::vector<int> t{3, 9, 27, 45};
  const auto cond = model.encode_condition(x);
  const auto asym = model.denoise(st, t, cond, {});
  model.set_symmetric_fusion(true);
  const auto sym = model.denoise(st, t, cond, {});
  double diff = 0.0;
  for (std::size_t i = 0; i < asym.size(); ++i) diff = std::max(diff, std::abs(asym[i] - sym[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(Denoise, GradientReachesEveryGroupWithoutClassifierLoss) {
  const auto cfg = tiny_config();
  Denoiser<double> model(cfg, 14);
  const auto schedule = NoiseSchedule::linear(50, 1e-4, 0.02);
  Rng rng(15);
  auto batch = random_batch(cfg, schedule, 6, 0.3, rng);
  batch.null_mask[0] = 1;
  batch.null_mask[1] = 0;
  LossWeights w;
  w.lambda3 = 0.0;
  Tape<double> tape;
  const auto bound = model.bind(tape, true);
  Rng drop(16);
  tape.backward(forward_losses(model, bound, batch, w, schedule, true, &drop).total);
  for (const char* g : {"layers", "time_proj", "cond_proj", "msa", "null"})
    EXPECT_GT(group_grad_norm(model, tape, bound, g), 0.0) << g;
  EXPECT_EQ(group_grad_norm(model, tape, bound, "classifier"), 0.0);
}

TEST(Denoise, ClassifierLossAloneReachesDenoiser) {
  const auto cfg = tiny_config();
  Denoiser<double> model(cfg, 17);
  const auto schedule = NoiseSchedule::linear(50, 1e-4, 0.02);
  Rng rng(18);
  const auto batch = random_batch(cfg, schedule, 6, 0.0, rng);
  LossWeights w;
  w.lambda1 = w.lambda2 = 0.0;
  w.lambda3 = 1.0;
  Tape<double> tape;
  const auto bound = model.bind(tape, true);
  Rng drop(19);
  tape.backward(forward_losses(model, bound, batch, w, schedule, true, &drop).total);
  for (const char* g : {"layers", "time_proj", "cond_proj", "msa", "classifier"})
    EXPECT_GT(group_grad_norm(model, tape, bound, g), 0.0) << g;
}

TEST(Denoise, NullEmbeddingReceivesGradientOverTraining) {
  const auto cfg = tiny_config();
  Denoiser<double> model(cfg, 20);
  const auto schedule = NoiseSchedule::linear(50, 1e-4, 0.02);
  const std::size_t null_idx = model.params().index("null.embedding");
  Rng rng(21);
  LossWeights w;
  w.p_conditional = 0.1;
  double total = 0.0;
  int masked_batches = 0;
  for (int step = 0; step < 100; ++step) {
    const auto batch = random_batch(cfg, schedule, 8, w.p_conditional, rng);
    masked_batches += std::accumulate(batch.null_mask.begin(), batch.null_mask.end(), 0) > 0;
    Tape<double> tape;
    const auto bound = model.bind(tape, true);
    Rng drop = rng.fork(step);
    tape.backward(forward_losses(model, bound, batch, w, schedule, true, &drop).total);
    for (auto g : tape.grad(bound.p[null_idx]).data()) total += std::abs(g);
  }
  EXPECT_GT(masked_batches, 0);
  EXPECT_GT(total, 0.0);
}

TEST(Classifier, ZeroWeightsGiveUniformSoftmax) {
  const auto cfg = tiny_config(4);
  Denoiser<double> model(cfg, 22);
  for (auto i : model.group("classifier")) std::fill(model.params()[i].data().begin(), model.params()[i].data().end(), 0.0);
  Rng rng(23);
  const auto logits = model.classify(sample_gaussian<double>({3, cfg.d_s}, rng));
  EXPECT_EQ(logits, Tensor<double>({3, 4}, 0.0));
  const std::vector<std::size_t> labels{0, 1, 3};
  EXPECT_NEAR(loss_classification(logits, labels), std::log(4.0), 1e-12);
}

TEST(Classifier, ShiftInvariance) {
  Rng rng(24);
  auto logits = sample_gaussian<double>({4, 5}, rng);
  const std::vector<std::size_t> labels{0, 4, 2, 2};
  const double base = loss_classification(logits, labels);
  for (auto& v : logits.data()) v += 123.0;
  EXPECT_NEAR(loss_classification(logits, labels), base, 1e-9);
}

TEST(Classifier, CrossEntropyValues) {
  const std::vector<std::size_t> one{0};
  // Uniform over 10 classes.
  EXPECT_NEAR(loss_classification(Tensor<double>({1, 10}, 0.0), one), std::log(10.0), 1e-12);
  EXPECT_NEAR(loss_classification(Tensor<double>({1, 10}, 0.0), one), 2.30259, 1e-5);
  // Probability 0.8 on the true class: logit gap ln 4.
  EXPECT_NEAR(loss_classification(Tensor<double>::matrix({{std::log(4.0), 0.0}}), one), -std::log(0.8), 1e-12);
  EXPECT_NEAR(-std::log(0.8), 0.22314, 1e-5);
  // Margin 20 makes the prediction effectively one-hot.
  EXPECT_LE(loss_classification(Tensor<double>::matrix({{20.0, 0.0, 0.0}}), one), 1e-6);
}

TEST(Classifier, LabelOutOfRangeThrows) {
  const std::vector<std::size_t> bad{3};
  EXPECT_THROW(loss_classification(Tensor<double>({1, 3}, 0.0), bad), ShapeError);
}
