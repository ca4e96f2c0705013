#include "cloud/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "cloud/graph.hpp"
#include "cloud/losses.hpp"
#include "cloud/models.hpp"
#include "cloud/observation.hpp"
#include "cloud/rng.hpp"
#include "cloud/rope.hpp"

namespace cloud::check {

namespace {

using ad::NodeId;

constexpr std::size_t kMaxRedraws = 200;
/// Central differences at h = 1e-6 carry ~1e-10 of cancellation noise per unit
/// of loss, so components below this fraction of the loss scale are compared
/// against the floor instead of their own magnitude.
constexpr double kNoiseFloor = 1e-5;

struct Problem {
  ad::Graph graph;
  ad::Feed feed;
  NodeId loss{};
  std::vector<NodeId> leaves;
};

using Builder = std::function<void(Problem&, Rng&, std::size_t batch)>;

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

/// Xavier init leaves biases at zero, which is not a generic point.
model::ModelBundle random_bundle(model::Variant variant, rope::ObsKind kind, Rng& rng) {
  auto bundle = model::init_bundle(variant, kind, rng());
  for (auto& p : bundle.parameters()) {
    for (double& v : p.tensor->data()) v += uniform(rng, -0.1, 0.1);
  }
  return bundle;
}

void add_mlp(std::vector<NodeId>& leaves, const model::BoundMlp& mlp) {
  for (const auto& [w, b] : mlp.layers) {
    leaves.push_back(w);
    leaves.push_back(b);
  }
}

/// Scalar probe of a matrix-valued node: sum(x * c) for a fixed random column c.
NodeId linear_probe(ad::Graph& graph, NodeId x, Rng& rng) {
  const auto cols = graph.shape(x)[1];
  return graph.sum(graph.matmul(x, graph.constant(random_tensor({cols, 1}, rng, -1.0, 1.0))));
}

Tensor random_actions(std::size_t n, Rng& rng) { return random_tensor({n, 4}, rng, 0.0, 64.0); }

// bind() copies parameter values into the graph, so builders may drop their bundle.

void encode_state_coords(Problem& p, Rng& rng, std::size_t n) {
  const auto bundle = random_bundle(model::Variant::FI, rope::ObsKind::Coords, rng);
  const auto m = model::bind(p.graph, bundle);
  const auto obs = p.graph.constant(random_tensor({n, bundle.arch.observation_features()}, rng, 0.0, 1.0));
  p.loss = linear_probe(p.graph, model::encode_state(p.graph, m, obs), rng);
  add_mlp(p.leaves, m.state_mlp);
}

void encode_state_raster(Problem& p, Rng& rng, std::size_t) {
  const auto bundle = random_bundle(model::Variant::FI, rope::ObsKind::Raster, rng);
  const auto m = model::bind(p.graph, bundle);
  const rope::EnvConfig env;
  const auto a = rope::reset(env, rng());
  const auto b = rope::reset(env, rng());
  const rope::RopeState* states[] = {&a, &b};
  const auto obs = p.graph.constant(rope::render_batch(states, rope::ObsKind::Raster, env.image_size));
  p.loss = linear_probe(p.graph, model::encode_state(p.graph, m, obs), rng);
  for (const auto& [k, b2] : m.state_conv.stages) {
    p.leaves.push_back(k);
    p.leaves.push_back(b2);
  }
  p.leaves.push_back(m.state_conv.head.first);
  p.leaves.push_back(m.state_conv.head.second);
}

void encode_action(Problem& p, Rng& rng, std::size_t n) {
  const auto bundle = random_bundle(model::Variant::FI, rope::ObsKind::Coords, rng);
  const auto m = model::bind(p.graph, bundle);
  const auto z = model::encode_action(p.graph, m, p.graph.constant(random_actions(n, rng)));
  p.loss = linear_probe(p.graph, z, rng);
  add_mlp(p.leaves, *m.action_encoder);
}

void forward_predict(Problem& p, Rng& rng, std::size_t n) {
  const auto bundle = random_bundle(model::Variant::FI, rope::ObsKind::Coords, rng);
  const auto m = model::bind(p.graph, bundle);
  const auto d = bundle.arch.embed_dim;
  const auto h = p.graph.parameter(random_tensor({n, d}, rng, -1.0, 1.0), "h");
  const auto z = p.graph.parameter(random_tensor({n, d}, rng, -1.0, 1.0), "z");
  p.loss = linear_probe(p.graph, model::forward_predict(p.graph, m, h, z), rng);
  add_mlp(p.leaves, *m.forward_model);
  p.leaves.push_back(h);
  p.leaves.push_back(z);
}

void inverse_predict(Problem& p, Rng& rng, std::size_t n) {
  const auto bundle = random_bundle(model::Variant::FI, rope::ObsKind::Coords, rng);
  const auto m = model::bind(p.graph, bundle);
  const auto d = bundle.arch.embed_dim;
  const auto h_t = p.graph.parameter(random_tensor({n, d}, rng, -1.0, 1.0), "h_t");
  const auto h_next = p.graph.parameter(random_tensor({n, d}, rng, -1.0, 1.0), "h_next");
  p.loss = linear_probe(p.graph, model::inverse_predict(p.graph, m, h_t, h_next), rng);
  add_mlp(p.leaves, *m.inverse_model);
  p.leaves.push_back(h_t);
  p.leaves.push_back(h_next);
}

/// Alternates the two denominators across points.
Builder nce(bool forward) {
  return [forward](Problem& p, Rng& rng, std::size_t n) {
    const auto mode = rng() % 2 == 0 ? train::Denominator::PaperLiteral
                                     : train::Denominator::StandardInfoNce;
    const auto a = p.graph.parameter(random_tensor({n, 16}, rng, -1.0, 1.0), "anchor");
    const auto b = p.graph.parameter(random_tensor({n, 16}, rng, -1.0, 1.0), "b");
    const auto c = p.graph.parameter(random_tensor({n, 16}, rng, -1.0, 1.0), "c");
    p.loss = forward ? train::forward_nce_loss(p.graph, a, b, c, 0.1, mode)
                     : train::inverse_nce_loss(p.graph, a, b, c, 0.1, mode);
    p.leaves = {a, b, c};
  };
}

void decoder_loss(Problem& p, Rng& rng, std::size_t n) {
  const auto bundle = random_bundle(model::Variant::FI, rope::ObsKind::Coords, rng);
  const auto m = model::bind(p.graph, bundle);
  const auto actions = p.graph.constant(random_actions(n, rng));
  const auto decoded = model::decode_action(p.graph, m, model::encode_action(p.graph, m, actions));
  p.loss = train::decoder_loss(p.graph, decoded, actions, static_cast<double>(bundle.arch.image_size));
  add_mlp(p.leaves, *m.action_encoder);
  add_mlp(p.leaves, *m.action_decoder);
}

void baseline_regression(Problem& p, Rng& rng, std::size_t n) {
  const auto bundle = random_bundle(model::Variant::FI, rope::ObsKind::Coords, rng);
  const auto m = model::bind(p.graph, bundle);
  const auto f = bundle.arch.observation_features();
  const train::Batch batch{random_tensor({n, f}, rng, 0.0, 1.0), random_tensor({n, f}, rng, 0.0, 1.0),
                           random_actions(n, rng), random_actions(n, rng)};
  const auto nodes = train::batch_inputs(p.graph, batch, p.feed);
  train::LossConfig config;
  config.objective = train::Objective::Regression;
  p.loss = train::total_loss(p.graph, m, nodes, config).total;
  p.leaves = m.parameters;
}

double evaluate(Problem& p, NodeId leaf, const Tensor& value) {
  ad::Feed feed = p.feed;
  feed.bind(leaf, value);
  return p.graph.forward_eval(p.loss, feed).item();
}

GradCheckResult check(const std::string& name, const Builder& build, const GradCheckConfig& config) {
  GradCheckResult result{name};
  for (std::size_t point = 0; point < config.points; ++point) {
    std::unique_ptr<Problem> problem;
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt == kMaxRedraws) {
        throw std::runtime_error("gradcheck " + name + ": no point away from Relu kinks");
      }
      Rng rng = make_rng(config.seed, "gradcheck/" + name, point * kMaxRedraws + attempt);
      problem = std::make_unique<Problem>();
      build(*problem, rng, config.batch);
      problem->graph.forward(problem->feed);
      if (problem->graph.min_relu_margin() >= config.kink_margin) break;
    }
    Problem& p = *problem;
    const auto grads = p.graph.backward(p.loss);
    const double floor = kNoiseFloor * std::max(1.0, std::abs(p.graph.value(p.loss).item()));
    Rng pick = make_rng(config.seed, "gradcheck-coords/" + name, point);
    for (std::size_t k = 0; k < config.coordinates; ++k) {
      const NodeId leaf = p.leaves[uniform_index(pick, p.leaves.size())];
      const Tensor original = p.graph.value(leaf);
      const std::size_t i = uniform_index(pick, original.size());
      Tensor shifted = original;
      shifted.data()[i] = original.data()[i] + config.step;
      const double plus = evaluate(p, leaf, shifted);
      shifted.data()[i] = original.data()[i] - config.step;
      const double minus = evaluate(p, leaf, shifted);
      evaluate(p, leaf, original);
      const double numeric = (plus - minus) / (2.0 * config.step);
      const double analytic = grads.of(leaf).data()[i];
      result.max_relative_error =
          std::max(result.max_relative_error, relative_error(analytic, numeric, floor));
      ++result.coordinates;
    }
    ++result.points;
  }
  result.passed = result.max_relative_error < config.tolerance;
  return result;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  if (scale == 0.0) return 0.0;
  return std::abs(analytic - numeric) / scale;
}

std::vector<GradCheckResult> run_gradient_suite(const GradCheckConfig& config) {
  if (config.points == 0 || config.coordinates == 0) {
    throw std::invalid_argument("gradcheck needs at least one point and one coordinate");
  }
  if (config.batch < 2) throw std::invalid_argument("gradcheck batch must be >= 2");
  const std::vector<std::pair<std::string, Builder>> suite = {
      {"encode_state[coords]", encode_state_coords},
      {"encode_state[raster]", encode_state_raster},
      {"encode_action", encode_action},
      {"forward_predict", forward_predict},
      {"inverse_predict", inverse_predict},
      {"forward_nce_loss", nce(true)},
      {"inverse_nce_loss", nce(false)},
      {"decoder_loss", decoder_loss},
      {"baseline_regression_loss", baseline_regression},
  };
  std::vector<GradCheckResult> out;
  for (const auto& [name, build] : suite) out.push_back(check(name, build, config));
  return out;
}

}  // namespace cloud::check
