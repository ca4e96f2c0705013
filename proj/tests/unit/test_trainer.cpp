#include <gtest/gtest.h>

#include <cmath>

#include "cloud/dataset.hpp"
#include "cloud/losses.hpp"
#include "cloud/models.hpp"
#include "cloud/rng.hpp"
#include "cloud/trainer.hpp"

namespace {

using namespace cloud;
using train::Denominator;

double cos_sim(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) {
    dot += a.at(i, k) * b.at(j, k);
    na += a.at(i, k) * a.at(i, k);
    nb += b.at(j, k) * b.at(j, k);
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Scalar re-evaluation of the contrastive loss, written without the graph engine.
// Negatives for anchor i come from both `first` and `second`, rows j != i.
double nce_oracle(const Tensor& anchors, const Tensor& positives, const Tensor& first,
                  const Tensor& second, double tau, Denominator mode) {
  const std::size_t n = anchors.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = std::exp(cos_sim(anchors, i, positives, i) / tau);
    double denom = mode == Denominator::StandardInfoNce ? pos : 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      denom += std::exp(cos_sim(anchors, i, first, j) / tau);
      denom += std::exp(cos_sim(anchors, i, second, j) / tau);
    }
    total += -std::log(pos / denom);
  }
  return total / static_cast<double>(n);
}

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (double& v : t.data()) v = uniform(rng, -1.0, 1.0);
  return t;
}

Tensor scaled(Tensor t, double s) {
  for (double& v : t.data()) v *= s;
  return t;
}

TEST(NceLoss, AllEqualSimilaritiesGiveLogTwoNMinusOne) {
  for (std::size_t n : {2, 8, 128}) {
    Rng rng(n);
    const Tensor base = random_tensor(1, 16, rng);
    Tensor same({n, 16});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < 16; ++k) same.at(i, k) = base[k] * (1.0 + 0.1 * static_cast<double>(i));
    }
    const double expected = std::log(2.0 * static_cast<double>(n - 1));
    for (double tau : {0.1, 1.0}) {
      EXPECT_NEAR(train::forward_nce_loss(same, same, same, tau, Denominator::PaperLiteral), expected, 1e-9);
      EXPECT_NEAR(train::inverse_nce_loss(same, same, same, tau, Denominator::PaperLiteral), expected, 1e-9);
    }
  }
  EXPECT_NEAR(std::log(2.0), 0.693147, 1e-6);
}

TEST(NceLoss, ClosedFormInstance) {
  const Tensor z = Tensor::matrix(2, 2, {1, 0, -1, 0});
  const double expected = -20.0 + std::log(2.0);
  EXPECT_NEAR(train::inverse_nce_loss(z, z, z, 0.1, Denominator::PaperLiteral), expected, 1e-9);
  EXPECT_NEAR(train::forward_nce_loss(z, z, z, 0.1, Denominator::PaperLiteral), expected, 1e-9);
}

TEST(NceLoss, HandInstanceMatchesOracle) {
  const Tensor pred = Tensor::matrix(2, 2, {1, 0, 0.3, 0.8});
  const Tensor h_t = Tensor::matrix(2, 2, {0.5, 0.5, 0, 1});
  const Tensor h_next = Tensor::matrix(2, 2, {1, 0, -1, 0});
  for (auto mode : {Denominator::PaperLiteral, Denominator::StandardInfoNce}) {
    EXPECT_NEAR(train::forward_nce_loss(pred, h_t, h_next, 0.1, mode),
                nce_oracle(pred, h_next, h_t, h_next, 0.1, mode), 1e-10);
    EXPECT_NEAR(train::inverse_nce_loss(pred, h_t, h_next, 0.1, mode),
                nce_oracle(pred, h_t, h_t, h_next, 0.1, mode), 1e-10);
  }
}

TEST(NceLoss, RandomBatchesMatchOracle) {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = trial < 50 ? 2 : 2 + trial % 7;
    const Tensor a = random_tensor(n, 16, rng), b = random_tensor(n, 16, rng), c = random_tensor(n, 16, rng);
    const auto mode = trial % 2 ? Denominator::PaperLiteral : Denominator::StandardInfoNce;
    EXPECT_NEAR(train::forward_nce_loss(a, b, c, 0.1, mode), nce_oracle(a, c, b, c, 0.1, mode), 1e-10);
    EXPECT_NEAR(train::inverse_nce_loss(a, b, c, 0.1, mode), nce_oracle(a, b, b, c, 0.1, mode), 1e-10);
  }
}

TEST(NceLoss, PositiveScalingInvariance) {
  Rng rng(4);
  const Tensor a = random_tensor(6, 16, rng), b = random_tensor(6, 16, rng), c = random_tensor(6, 16, rng);
  for (auto mode : {Denominator::PaperLiteral, Denominator::StandardInfoNce}) {
    const double f = train::forward_nce_loss(a, b, c, 0.1, mode);
    const double i = train::inverse_nce_loss(a, b, c, 0.1, mode);
    EXPECT_NEAR(train::forward_nce_loss(scaled(a, 3.7), scaled(b, 3.7), scaled(c, 3.7), 0.1, mode), f, 1e-12);
    EXPECT_NEAR(train::inverse_nce_loss(scaled(a, 3.7), scaled(b, 3.7), scaled(c, 3.7), 0.1, mode), i, 1e-12);
  }
}

TEST(NceLoss, AnchorPermutationInvariance) {
  Rng rng(5);
  const Tensor a = random_tensor(5, 16, rng), b = random_tensor(5, 16, rng), c = random_tensor(5, 16, rng);
  const std::size_t perm[] = {3, 0, 4, 1, 2};
  Tensor pa = a, pb = b, pc = c;
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < 16; ++k) {
      pa.at(i, k) = a.at(perm[i], k);
      pb.at(i, k) = b.at(perm[i], k);
      pc.at(i, k) = c.at(perm[i], k);
    }
  }
  EXPECT_NEAR(train::forward_nce_loss(a, b, c, 0.1, Denominator::PaperLiteral),
              train::forward_nce_loss(pa, pb, pc, 0.1, Denominator::PaperLiteral), 1e-12);
}

TEST(NceLoss, PaperLiteralCanBeNegativeStandardCannot) {
  const Tensor z = Tensor::matrix(2, 2, {1, 0, -1, 0});
  EXPECT_LT(train::forward_nce_loss(z, z, z, 0.1, Denominator::PaperLiteral), 0.0);
  EXPECT_GT(train::forward_nce_loss(z, z, z, 0.1, Denominator::StandardInfoNce), 0.0);
}

TEST(NceLoss, RejectsDegenerateInputs) {
  const Tensor one = Tensor::matrix(1, 2, {1, 0});
  EXPECT_ANY_THROW(train::forward_nce_loss(one, one, one, 0.1, Denominator::PaperLiteral));
  const Tensor zero_row = Tensor::matrix(2, 2, {0, 0, 1, 0});
  const Tensor ok = Tensor::matrix(2, 2, {1, 0, 0, 1});
  EXPECT_THROW(train::forward_nce_loss(zero_row, ok, ok, 0.1, Denominator::PaperLiteral), DomainError);
}

train::Batch random_batch(std::size_t n, std::uint64_t seed) {
  const auto data = data::collect_dataset(rope::EnvConfig{}, 2, n + 1, seed);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return train::make_batch(data, idx, rope::ObsKind::Coords);
}

void zero_decoder(model::ModelBundle& b, const std::vector<double>& c) {
  for (auto& layer : b.action_decoder->layers) {
    for (double& v : layer.weight.data()) v = 0.0;
    for (double& v : layer.bias.data()) v = 0.0;
  }
  b.action_decoder->layers.back().bias = Tensor::row(c);
}

TEST(DecoderLoss, ConstantDecoder) {
  auto b = model::init_bundle(model::Variant::FI, rope::ObsKind::Coords, 1);
  const std::vector<double> c{30, 31, 29, 35};
  zero_decoder(b, c);
  const auto batch = random_batch(6, 2);
  double expected = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t k = 0; k < 4; ++k) expected += std::pow((c[k] - batch.actions.at(i, k)) / 64.0, 2);
  }
  expected /= static_cast<double>(batch.size());
  EXPECT_NEAR(train::decoder_loss(batch, b), expected, 1e-12);
}

TEST(DecoderLoss, PerfectRoundTripIsZero) {
  ad::Graph g;
  const Tensor a = Tensor::matrix(2, 4, {1, 2, 3, 4, 60, 50, 40, 30});
  const auto loss = train::decoder_loss(g, g.constant(a), g.constant(a), 64.0);
  EXPECT_EQ(g.forward_eval(loss).item(), 0.0);
}

TEST(RegressionTerm, OffsetAlongAxisGivesDeltaSquared) {
  Rng rng(6);
  const Tensor h = random_tensor(3, 16, rng);
  Tensor shifted = h;
  const double delta = 0.37;
  for (std::size_t i = 0; i < 3; ++i) shifted.at(i, 0) += delta;
  ad::Graph g;
  const auto loss = train::mean_squared_distance(g, g.constant(shifted), g.constant(h));
  EXPECT_NEAR(g.forward_eval(loss).item(), delta * delta, 1e-15);
  ad::Graph g2;
  const auto zero = train::mean_squared_distance(g2, g2.constant(h), g2.constant(h));
  EXPECT_EQ(g2.forward_eval(zero).item(), 0.0);
}

TEST(TotalLoss, SumOfIndependentComponents) {
  const auto b = model::init_bundle(model::Variant::FI, rope::ObsKind::Coords, 3);
  const auto batch = random_batch(8, 4);
  train::LossConfig config;
  config.decoder_weight = 0.7;
  const auto values = train::total_loss(batch, b, config);

  const Tensor h_t = model::encode_states(b, batch.observations);
  const Tensor h_next = model::encode_states(b, batch.next_observations);
  const Tensor z_t = model::encode_actions(b, batch.actions);
  const Tensor z_next = model::encode_actions(b, batch.next_actions);
  const double lf = nce_oracle(model::forward_predict(b, h_t, z_t), h_next, h_t, h_next, 0.1,
                               Denominator::PaperLiteral);
  const double li = nce_oracle(model::inverse_predict(b, h_t, h_next), z_t, z_t, z_next, 0.1,
                               Denominator::PaperLiteral);
  const double ld = train::decoder_loss(batch, b);
  EXPECT_NEAR(values.forward, lf, 1e-12);
  EXPECT_NEAR(values.inverse, li, 1e-12);
  EXPECT_NEAR(values.decoder, ld, 1e-12);
  EXPECT_NEAR(values.total, lf + li + 0.7 * ld, 1e-12);
}

TEST(TotalLoss, NoDecoderWeightIsForwardPlusInverse) {
  const auto b = model::init_bundle(model::Variant::FI, rope::ObsKind::Coords, 3);
  const auto batch = random_batch(8, 5);
  train::LossConfig config;
  config.decoder_weight = 0.0;
  const auto v = train::total_loss(batch, b, config);
  EXPECT_EQ(v.total, v.forward + v.inverse);
}

TEST(TotalLoss, VariantFIsForwardTermOnly) {
  const auto b = model::init_bundle(model::Variant::F, rope::ObsKind::Coords, 3);
  const auto batch = random_batch(8, 6);
  const auto v = train::total_loss(batch, b, {});
  EXPECT_EQ(v.total, v.forward);
  EXPECT_EQ(v.inverse, 0.0);

  ad::Graph g;
  ad::Feed feed;
  const auto m = model::bind(g, b);
  const auto nodes = train::batch_inputs(g, batch, feed);
  const auto loss = train::total_loss(g, m, nodes, {});
  EXPECT_FALSE(loss.inverse.has_value());
  g.forward(feed);
  const auto grads = g.backward(loss.total);
  for (auto p : m.parameters) EXPECT_TRUE(grads.contains(p));
}

TEST(TotalLoss, VariantIIgnoresForwardTerm) {
  const auto b = model::init_bundle(model::Variant::I, rope::ObsKind::Coords, 3);
  const auto batch = random_batch(8, 7);
  train::LossConfig config;
  const auto v = train::total_loss(batch, b, config);
  EXPECT_EQ(v.forward, 0.0);
  EXPECT_NEAR(v.total, v.inverse + v.decoder, 1e-12);
}

TEST(BaselineLoss, MatchesComponents) {
  const auto b = model::init_bundle(model::Variant::FI, rope::ObsKind::Coords, 8);
  const auto batch = random_batch(5, 9);
  const Tensor h_t = model::encode_states(b, batch.observations);
  const Tensor h_next = model::encode_states(b, batch.next_observations);
  const Tensor pred = model::forward_predict(b, h_t, model::encode_actions(b, batch.actions));
  const Tensor act = model::decode_actions(b, model::inverse_predict(b, h_t, h_next));
  double fwd = 0.0, inv = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t k = 0; k < 16; ++k) fwd += std::pow(pred.at(i, k) - h_next.at(i, k), 2);
    for (std::size_t k = 0; k < 4; ++k) inv += std::pow((act.at(i, k) - batch.actions.at(i, k)) / 64.0, 2);
  }
  const double n = static_cast<double>(batch.size());
  const double expected = fwd / n + inv / n + 0.5 * train::decoder_loss(batch, b);
  EXPECT_NEAR(train::baseline_regression_loss(batch, b, 0.5), expected, 1e-12);
}

TEST(Dataset, SingleTrajectoryIsContiguous) {
  const auto d = data::collect_dataset(rope::EnvConfig{}, 1, 20, 1);
  ASSERT_EQ(d.records.size(), 20u);
  Rng rng = make_rng(1, "trajectory", 0);
  EXPECT_EQ(d.records.front().state, rope::reset(rope::EnvConfig{}, rng));
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    EXPECT_EQ(d.records[i].step, i);
    if (i + 1 < d.records.size()) {
      EXPECT_EQ(d.records[i].next_state, d.records[i + 1].state);
      EXPECT_EQ(d.successor(i), &d.records[i + 1]);
    }
  }
  EXPECT_EQ(d.successor(19), nullptr);
}

TEST(Dataset, SameSeedSameData) {
  const rope::EnvConfig env;
  EXPECT_EQ(data::collect_dataset(env, 3, 5, 9), data::collect_dataset(env, 3, 5, 9));
  EXPECT_NE(data::collect_dataset(env, 3, 5, 9), data::collect_dataset(env, 3, 5, 10));
}

TEST(Dataset, DeskScaleSplitAndInvariants) {
  const rope::EnvConfig env;
  const auto d = data::collect_dataset(env, 2000, 20, 0);
  ASSERT_EQ(d.records.size(), 40000u);
  EXPECT_EQ(d.indices(data::Split::Train).size(), 30000u);
  EXPECT_EQ(d.indices(data::Split::Test).size(), 10000u);
  for (const auto& r : d.records) {
    ASSERT_LE(rope::max_segment_length(r.next_state), env.segment_length + 1e-6);
    ASSERT_TRUE(rope::in_bounds(r.next_state, env));
  }
}

TEST(Dataset, TrainingSamplesHaveSuccessors) {
  const auto d = data::collect_dataset(rope::EnvConfig{}, 4, 5, 2);
  const auto samples = train::training_samples(d, data::Split::Train);
  EXPECT_EQ(samples.size(), 3u * 4u);
  for (auto i : samples) {
    ASSERT_NE(d.successor(i), nullptr);
    EXPECT_TRUE(d.is_train(d.records[i]));
  }
}

data::Dataset small_dataset() { return data::collect_dataset(rope::EnvConfig{}, 8, 6, 3); }

TEST(Train, ZeroEpochsReturnsInitialBundle) {
  train::TrainConfig config;
  config.epochs = 0;
  config.seed = 12;
  const auto result = train::train(small_dataset(), config);
  EXPECT_TRUE(model::bitwise_equal(result.bundle,
                                   model::init_bundle(model::Variant::FI, rope::ObsKind::Coords, 12)));
  EXPECT_TRUE(result.curve.empty());
}

TEST(Train, ZeroLearningRateGivesFlatCurve) {
  train::TrainConfig config;
  config.epochs = 4;
  config.learning_rate = 0.0;
  config.batch_size = 128;  // one batch holding every sample
  const auto result = train::train(small_dataset(), config);
  ASSERT_EQ(result.curve.size(), 4u);
  for (const auto& e : result.curve) EXPECT_NEAR(e.total, result.curve.front().total, 1e-12);
}

TEST(Train, ReproducibleAndReducesLoss) {
  train::TrainConfig config;
  config.epochs = 5;
  config.batch_size = 8;
  config.seed = 4;
  const auto data = small_dataset();
  std::vector<train::EpochLoss> seen;
  const auto a = train::train(data, config, [&](const train::EpochLoss& e) { seen.push_back(e); });
  const auto b = train::train(data, config);
  EXPECT_TRUE(model::bitwise_equal(a.bundle, b.bundle));
  ASSERT_EQ(a.curve.size(), b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    EXPECT_EQ(a.curve[i].total, b.curve[i].total);
    EXPECT_EQ(seen[i].total, a.curve[i].total);
    EXPECT_EQ(a.curve[i].epoch, i + 1);
  }
  EXPECT_LT(a.curve.back().total, a.curve.front().total);
}

TEST(Train, AllVariantsAndBaselineRun) {
  const auto data = small_dataset();
  for (auto v : {model::Variant::F, model::Variant::I, model::Variant::FI}) {
    train::TrainConfig config;
    config.variant = v;
    config.epochs = 1;
    config.batch_size = 8;
    EXPECT_EQ(train::train(data, config).curve.size(), 1u);
  }
  train::TrainConfig baseline;
  baseline.objective = train::Objective::Regression;
  baseline.epochs = 1;
  baseline.batch_size = 8;
  EXPECT_TRUE(std::isfinite(train::train(data, baseline).curve.back().total));
  baseline.variant = model::Variant::F;
  EXPECT_THROW(train::train(data, baseline), std::invalid_argument);
}

TEST(Train, RasterObservations) {
  train::TrainConfig config;
  config.obs_kind = rope::ObsKind::Raster;
  config.epochs = 1;
  config.batch_size = 16;
  const auto result = train::train(data::collect_dataset(rope::EnvConfig{}, 4, 3, 1), config);
  EXPECT_EQ(result.bundle.arch.obs_kind, rope::ObsKind::Raster);
  EXPECT_TRUE(std::isfinite(result.curve.back().total));
}

TEST(Train, DivergenceReportsEpochAndBatch) {
  train::TrainConfig config;
  config.epochs = 3;
  config.batch_size = 8;
  config.learning_rate = 1e200;
  try {
    train::train(small_dataset(), config);
    FAIL() << "expected divergence";
  } catch (const train::TrainingDivergedError& e) {
    EXPECT_GE(e.epoch, 1u);
    EXPECT_GE(e.batch, 1u);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(TrainConfig, Validation) {
  train::TrainConfig config;
  config.batch_size = 1;
  EXPECT_THROW(config.validate(), std::invalid_argument);
  config = {};
  config.temperature = 0.0;
  EXPECT_THROW(config.validate(), std::invalid_argument);
}

}  // namespace
