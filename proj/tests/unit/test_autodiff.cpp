#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "cloud/adam.hpp"
#include "cloud/graph.hpp"
#include "cloud/rng.hpp"

namespace {

using cloud::Rng;
using cloud::Tensor;
using cloud::ad::Graph;

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (double& v : t.data()) v = cloud::uniform(rng, -1.0, 1.0);
  return t;
}

// Straight-line reference used by the MLP oracle tests.
std::vector<double> affine(const std::vector<double>& x, const Tensor& w, const Tensor& b) {
  std::vector<double> out(w.cols());
  for (std::size_t j = 0; j < w.cols(); ++j) {
    double acc = b[j];
    for (std::size_t i = 0; i < w.rows(); ++i) acc += x[i] * w.at(i, j);
    out[j] = acc;
  }
  return out;
}

TEST(CosineSim, Examples) {
  const std::vector<double> e1{1, 0}, e2{0, 1}, u{1, 2}, v{2, 4};
  EXPECT_DOUBLE_EQ(cloud::ad::cosine_sim(e1, e1), 1.0);
  EXPECT_DOUBLE_EQ(cloud::ad::cosine_sim(e1, e2), 0.0);
  EXPECT_NEAR(cloud::ad::cosine_sim(u, v), 1.0, 1e-15);
}

TEST(CosineSim, ZeroNormIsDomainError) {
  const std::vector<double> zero{0, 0}, e1{1, 0};
  EXPECT_THROW(cloud::ad::cosine_sim(zero, e1), cloud::DomainError);
  EXPECT_THROW(cloud::ad::cosine_sim(e1, zero), cloud::DomainError);
}

TEST(CosineSim, BoundedSymmetricScaleInvariant) {
  Rng rng(3);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> u(7), v(7);
    for (auto& x : u) x = cloud::uniform(rng, -2, 2);
    for (auto& x : v) x = cloud::uniform(rng, -2, 2);
    const double s = cloud::ad::cosine_sim(u, v);
    EXPECT_LE(std::abs(s), 1.0 + 1e-15);
    EXPECT_EQ(s, cloud::ad::cosine_sim(v, u));
    std::vector<double> scaled = u;
    for (auto& x : scaled) x *= 3.7;
    EXPECT_NEAR(cloud::ad::cosine_sim(scaled, v), s, 1e-14);
  }
}

TEST(ForwardEval, IdentityGraph) {
  Graph g;
  const auto x = g.input({1, 1}, "x");
  cloud::ad::Feed feed;
  feed.bind(x, Tensor::scalar(3.0));
  EXPECT_EQ(g.forward_eval(x, feed).item(), 3.0);
}

TEST(ForwardEval, ZeroWeightAffineReturnsBias) {
  Graph g;
  const auto x = g.input({2, 3});
  const auto w = g.parameter(Tensor({3, 2}, 0.0));
  const auto b = g.parameter(Tensor::row({0.25, -4.0}));
  const auto y = g.add_row(g.matmul(x, w), b);
  Rng rng(1);
  cloud::ad::Feed feed;
  feed.bind(x, random_tensor(2, 3, rng));
  const Tensor out = g.forward_eval(y, feed);
  EXPECT_EQ(out, Tensor::matrix(2, 2, {0.25, -4.0, 0.25, -4.0}));
}

TEST(ForwardEval, TwoLayerMlpMatchesOracle) {
  Rng rng(11);
  const Tensor w1 = random_tensor(5, 8, rng), b1 = random_tensor(1, 8, rng);
  const Tensor w2 = random_tensor(8, 3, rng), b2 = random_tensor(1, 3, rng);
  const Tensor x = random_tensor(1, 5, rng);

  Graph g;
  const auto xi = g.constant(x);
  const auto h = g.relu(g.add_row(g.matmul(xi, g.parameter(w1)), g.parameter(b1)));
  const auto y = g.add_row(g.matmul(h, g.parameter(w2)), g.parameter(b2));
  const Tensor out = g.forward_eval(y);

  auto hidden = affine(x.values(), w1, b1);
  for (auto& v : hidden) v = std::max(v, 0.0);
  const auto expected = affine(hidden, w2, b2);
  ASSERT_EQ(out.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(out[i], expected[i], 1e-12);
}

TEST(ForwardEval, UnboundInputThrows) {
  Graph g;
  const auto x = g.input({1, 2}, "obs");
  EXPECT_THROW(g.forward_eval(g.sum(x)), cloud::ad::UnboundInputError);
}

TEST(ForwardEval, FeedShapeMismatchThrows) {
  Graph g;
  const auto x = g.input({1, 2});
  cloud::ad::Feed feed;
  feed.bind(x, Tensor({1, 3}));
  EXPECT_THROW(g.forward_eval(x, feed), cloud::ShapeError);
}

TEST(GraphBuild, ShapeMismatchIsReportedAtConstruction) {
  Graph g;
  const auto a = g.constant(Tensor({2, 3}));
  const auto b = g.constant(Tensor({2, 3}));
  EXPECT_THROW(g.matmul(a, b), cloud::ShapeError);
  EXPECT_THROW(g.add(a, g.constant(Tensor({3, 2}))), cloud::ShapeError);
  EXPECT_THROW(g.add_row(a, g.constant(Tensor({1, 2}))), cloud::ShapeError);
}

TEST(ForwardEval, CheckFiniteRaisesOnOverflow) {
  Graph g;
  g.set_check_finite(true);
  const auto y = g.exp(g.constant(Tensor::scalar(1000.0)));
  EXPECT_THROW(g.forward_eval(y), cloud::ad::NumericError);
}

TEST(ForwardEval, LogOfNonPositiveIsDomainError) {
  Graph g;
  const auto y = g.log(g.constant(Tensor::scalar(-1.0)));
  EXPECT_THROW(g.forward_eval(y), cloud::DomainError);
}

TEST(Backward, SquareAtThree) {
  Graph g;
  const auto x = g.parameter(Tensor::scalar(3.0));
  const auto loss = g.sum(g.square(x));
  g.forward();
  EXPECT_EQ(g.backward(loss).of(x).item(), 6.0);
}

TEST(Backward, ConstantLossGivesZeroGradients) {
  Graph g;
  const auto p = g.parameter(Tensor::matrix(1, 2, {1.0, -2.0}));
  g.relu(p);
  const auto loss = g.sum(g.constant(Tensor::scalar(5.0)));
  g.forward();
  const auto grads = g.backward(loss);
  for (double v : grads.of(p).data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, NonScalarLossThrows) {
  Graph g;
  const auto p = g.parameter(Tensor({2, 2}, 1.0));
  g.forward();
  EXPECT_THROW(g.backward(p), cloud::ShapeError);
}

TEST(Backward, BeforeForwardThrows) {
  Graph g;
  const auto loss = g.sum(g.parameter(Tensor({2, 2}, 1.0)));
  EXPECT_ANY_THROW(g.backward(loss));
}

TEST(Backward, CosineMatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor u0 = random_tensor(1, 6, rng), v0 = random_tensor(1, 6, rng);
    Graph g;
    const auto u = g.parameter(u0), v = g.parameter(v0);
    const auto loss = g.sum(g.cosine_rows(u, v));
    g.forward();
    const auto grads = g.backward(loss);
    for (auto leaf : {u, v}) {
      const Tensor base = leaf == u ? u0 : v0;
      for (std::size_t i = 0; i < base.size(); ++i) {
        Tensor plus = base, minus = base;
        plus[i] += 1e-6;
        minus[i] -= 1e-6;
        const double fp = cloud::ad::cosine_sim(leaf == u ? plus.data() : u0.data(),
                                                leaf == u ? v0.data() : plus.data());
        const double fm = cloud::ad::cosine_sim(leaf == u ? minus.data() : u0.data(),
                                                leaf == u ? v0.data() : minus.data());
        const double numeric = (fp - fm) / 2e-6;
        const double analytic = grads.of(leaf)[i];
        const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        EXPECT_LT(std::abs(analytic - numeric) / scale, 1e-6) << "trial " << trial << " i " << i;
      }
    }
  }
}

TEST(Backward, LogSumExpMatchesSoftmax) {
  Graph g;
  const auto x = g.parameter(Tensor::matrix(1, 3, {0.5, 1.5, -1.0}));
  const auto loss = g.sum(g.masked_logsumexp(x, {true, true, false}));
  g.forward();
  const double z = std::exp(0.5) + std::exp(1.5);
  EXPECT_NEAR(g.value(loss).item(), std::log(z), 1e-15);
  const Tensor grad = g.backward(loss).of(x);
  EXPECT_NEAR(grad[0], std::exp(0.5) / z, 1e-15);
  EXPECT_NEAR(grad[1], std::exp(1.5) / z, 1e-15);
  EXPECT_EQ(grad[2], 0.0);
}

TEST(Backward, Deterministic) {
  auto run = [] {
    Rng rng(99);
    Graph g;
    const auto x = g.constant(random_tensor(4, 6, rng));
    const auto w = g.parameter(random_tensor(6, 5, rng));
    const auto y = g.tanh(g.matmul(x, w));
    const auto loss = g.sum(g.cosine_pairwise(y, y));
    g.forward();
    return std::make_pair(g.value(loss), g.backward(loss).of(w));
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Adam, ZeroGradientNoDecayLeavesParamsUnchanged) {
  cloud::ad::AdamConfig config;
  config.weight_decay = 0.0;
  const std::vector<Tensor> params{Tensor::matrix(1, 3, {1.0, -2.0, 0.5})};
  const std::vector<Tensor> grads{Tensor({1, 3}, 0.0)};
  const auto update = cloud::ad::adam_step(params, grads, cloud::ad::make_adam_state(params, config));
  EXPECT_EQ(update.params, params);
  EXPECT_EQ(update.state.step, 1);
}

TEST(Adam, FirstStepMatchesFormula) {
  cloud::ad::AdamConfig config;
  config.weight_decay = 0.0;
  const std::vector<Tensor> params{Tensor::scalar(1.0)};
  const std::vector<Tensor> grads{Tensor::scalar(0.5)};
  const auto update = cloud::ad::adam_step(params, grads, cloud::ad::make_adam_state(params, config));
  const double delta = update.params[0].item() - 1.0;
  const double expected = -1e-3 * 0.5 / (std::sqrt(0.25) + 1e-8);
  EXPECT_NEAR(delta, expected, 1e-17);
  EXPECT_NEAR(delta, -9.99999998e-4, 1e-10);
}

TEST(Adam, WeightDecayShrinksParameter) {
  cloud::ad::AdamConfig config;
  config.weight_decay = 1e-6;
  const std::vector<Tensor> params{Tensor::scalar(1.0)};
  const std::vector<Tensor> grads{Tensor::scalar(0.0)};
  const auto update = cloud::ad::adam_step(params, grads, cloud::ad::make_adam_state(params, config));
  EXPECT_LT(update.params[0].item(), 1.0);
  // Effective gradient 1e-6 normalizes to a full lr step, up to epsilon.
  EXPECT_NEAR(update.params[0].item(), 1.0 - 1e-3 * 1e-6 / (1e-6 + 1e-8), 1e-15);
}

TEST(Adam, PureAndMatchesInPlace) {
  Rng rng(2);
  const std::vector<Tensor> params{random_tensor(3, 4, rng), random_tensor(1, 4, rng)};
  auto state = cloud::ad::make_adam_state(params, {});
  std::vector<Tensor> pure = params;
  std::vector<Tensor> inplace = params;
  for (int step = 0; step < 5; ++step) {
    const std::vector<Tensor> grads{random_tensor(3, 4, rng), random_tensor(1, 4, rng)};
    const auto before = pure;
    const auto before_state = state;
    auto update = cloud::ad::adam_step(pure, grads, state);
    EXPECT_EQ(pure, before);
    EXPECT_EQ(state.step, before_state.step);
    const auto again = cloud::ad::adam_step(pure, grads, state);
    EXPECT_EQ(again.params, update.params);

    std::vector<Tensor*> ptrs{&inplace[0], &inplace[1]};
    std::vector<const Tensor*> gptrs{&grads[0], &grads[1]};
    cloud::ad::adam_step_inplace(ptrs, gptrs, state);
    pure = std::move(update.params);
    EXPECT_EQ(inplace, pure);
    EXPECT_EQ(state.step, update.state.step);
  }
}

TEST(Adam, ShapeMismatchThrows) {
  const std::vector<Tensor> params{Tensor({2, 2})};
  const std::vector<Tensor> grads{Tensor({1, 2})};
  EXPECT_THROW(cloud::ad::adam_step(params, grads, cloud::ad::make_adam_state(params, {})),
               cloud::ShapeError);
}

}  // namespace
