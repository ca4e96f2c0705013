#include "cloud/losses.hpp"

#include <stdexcept>
#include <string>

namespace cloud::train {

using ad::Graph;
using ad::NodeId;

std::string_view to_string(Denominator d) {
  return d == Denominator::PaperLiteral ? "paper" : "standard";
}

std::string_view to_string(Objective o) {
  return o == Objective::Contrastive ? "contrastive" : "regression";
}

Denominator parse_denominator(std::string_view text) {
  if (text == "paper") return Denominator::PaperLiteral;
  if (text == "standard") return Denominator::StandardInfoNce;
  throw std::invalid_argument("unknown denominator mode '" + std::string(text) + "'");
}

Objective parse_objective(std::string_view text) {
  if (text == "contrastive") return Objective::Contrastive;
  if (text == "regression") return Objective::Regression;
  throw std::invalid_argument("unknown objective '" + std::string(text) + "'");
}

NodeId nce_loss(Graph& graph, NodeId anchors, NodeId positives, NodeId others,
                double temperature, Denominator mode) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  const auto n = graph.shape(anchors)[0];
  if (n < 2) throw std::invalid_argument("contrastive loss needs a batch of at least 2");
  if (graph.shape(positives)[0] != n || graph.shape(others)[0] != n) {
    throw ShapeError("contrastive loss: anchor, positive and negative sets differ in size");
  }
  const double inv_t = 1.0 / temperature;
  // Row i holds s(a_i, p_j) for j < n, then s(a_i, o_j).
  NodeId logits = graph.scale(
      graph.concat(graph.cosine_pairwise(anchors, positives), graph.cosine_pairwise(anchors, others)),
      inv_t);
  std::vector<bool> keep(n * 2 * n, true);
  for (std::size_t i = 0; i < n; ++i) {
    keep[i * 2 * n + n + i] = false;
    if (mode == Denominator::PaperLiteral) keep[i * 2 * n + i] = false;
  }
  NodeId log_denominator = graph.masked_logsumexp(logits, std::move(keep));
  NodeId log_numerator = graph.scale(graph.cosine_rows(anchors, positives), inv_t);
  return graph.mean(graph.sub(log_denominator, log_numerator));
}

NodeId forward_nce_loss(Graph& graph, NodeId predicted, NodeId h_t, NodeId h_next,
                        double temperature, Denominator mode) {
  return nce_loss(graph, predicted, h_next, h_t, temperature, mode);
}

NodeId inverse_nce_loss(Graph& graph, NodeId predicted, NodeId z_t, NodeId z_next,
                        double temperature, Denominator mode) {
  return nce_loss(graph, predicted, z_t, z_next, temperature, mode);
}

NodeId mean_squared_distance(Graph& graph, NodeId a, NodeId b) {
  const auto rows = static_cast<double>(graph.shape(a)[0]);
  return graph.scale(graph.sum(graph.square(graph.sub(a, b))), 1.0 / rows);
}

NodeId decoder_loss(Graph& graph, NodeId decoded, NodeId actions, double image_size) {
  return mean_squared_distance(graph, graph.scale(decoded, 1.0 / image_size),
                               graph.scale(actions, 1.0 / image_size));
}

BatchNodes batch_inputs(Graph& graph, const Batch& batch, ad::Feed& feed) {
  BatchNodes nodes{graph.input(batch.observations.shape(), "o_t"),
                   graph.input(batch.next_observations.shape(), "o_t+1"),
                   graph.input(batch.actions.shape(), "a_t"),
                   graph.input(batch.next_actions.shape(), "a_t+1")};
  feed.bind(nodes.observations, batch.observations)
      .bind(nodes.next_observations, batch.next_observations)
      .bind(nodes.actions, batch.actions)
      .bind(nodes.next_actions, batch.next_actions);
  return nodes;
}

LossNodes total_loss(Graph& graph, const model::BoundModel& m, const BatchNodes& batch,
                     const LossConfig& config) {
  using model::Variant;
  const auto variant = m.arch.variant;
  const double size = static_cast<double>(m.arch.image_size);
  LossNodes out{};
  NodeId h_t = model::encode_state(graph, m, batch.observations);
  NodeId h_next = model::encode_state(graph, m, batch.next_observations);

  auto add_decoder = [&](NodeId z, NodeId total) {
    out.decoder = decoder_loss(graph, model::decode_action(graph, m, z), batch.actions, size);
    return graph.add(total, graph.scale(*out.decoder, config.decoder_weight));
  };

  if (config.objective == Objective::Regression) {
    if (variant != Variant::FI) {
      throw model::VariantMismatchError("regression objective needs the FI architecture");
    }
    NodeId z = model::encode_action(graph, m, batch.actions);
    out.forward = mean_squared_distance(graph, model::forward_predict(graph, m, h_t, z), h_next);
    NodeId decoded_inverse =
        model::decode_action(graph, m, model::inverse_predict(graph, m, h_t, h_next));
    out.inverse = decoder_loss(graph, decoded_inverse, batch.actions, size);
    out.total = add_decoder(z, graph.add(*out.forward, *out.inverse));
    return out;
  }

  NodeId z = model::action_input(graph, m, batch.actions);
  std::optional<NodeId> total;
  if (model::has_forward(variant)) {
    out.forward = forward_nce_loss(graph, model::forward_predict(graph, m, h_t, z), h_t, h_next,
                                   config.temperature, config.denominator);
    total = out.forward;
  }
  if (model::has_inverse(variant)) {
    NodeId z_next = model::encode_action(graph, m, batch.next_actions);
    out.inverse = inverse_nce_loss(graph, model::inverse_predict(graph, m, h_t, h_next), z, z_next,
                                   config.temperature, config.denominator);
    total = total ? graph.add(*total, *out.inverse) : *out.inverse;
  }
  if (model::has_action_codec(variant)) total = add_decoder(z, *total);
  out.total = *total;
  return out;
}

namespace {

double eval_nce(const Tensor& anchors, const Tensor& positives, const Tensor& others,
                double temperature, Denominator mode) {
  Graph graph;
  graph.set_check_finite(true);
  NodeId loss = nce_loss(graph, graph.constant(anchors), graph.constant(positives),
                         graph.constant(others), temperature, mode);
  return graph.forward_eval(loss).item();
}

}  // namespace

double forward_nce_loss(const Tensor& predicted, const Tensor& h_t, const Tensor& h_next,
                        double temperature, Denominator mode) {
  return eval_nce(predicted, h_next, h_t, temperature, mode);
}

double inverse_nce_loss(const Tensor& predicted, const Tensor& z_t, const Tensor& z_next,
                        double temperature, Denominator mode) {
  return eval_nce(predicted, z_t, z_next, temperature, mode);
}

double decoder_loss(const Batch& batch, const model::ModelBundle& bundle) {
  Graph graph;
  auto m = model::bind(graph, bundle);
  NodeId actions = graph.constant(batch.actions);
  NodeId decoded = model::decode_action(graph, m, model::encode_action(graph, m, actions));
  NodeId loss = decoder_loss(graph, decoded, actions, static_cast<double>(bundle.arch.image_size));
  return graph.forward_eval(loss).item();
}

LossValues total_loss(const Batch& batch, const model::ModelBundle& bundle,
                      const LossConfig& config) {
  Graph graph;
  ad::Feed feed;
  auto m = model::bind(graph, bundle);
  const auto inputs = batch_inputs(graph, batch, feed);
  const auto nodes = total_loss(graph, m, inputs, config);
  graph.forward(feed);
  LossValues v;
  if (nodes.forward) v.forward = graph.value(*nodes.forward).item();
  if (nodes.inverse) v.inverse = graph.value(*nodes.inverse).item();
  if (nodes.decoder) v.decoder = graph.value(*nodes.decoder).item();
  v.total = graph.value(nodes.total).item();
  return v;
}

double baseline_regression_loss(const Batch& batch, const model::ModelBundle& bundle,
                                double decoder_weight) {
  LossConfig config;
  config.objective = Objective::Regression;
  config.decoder_weight = decoder_weight;
  return total_loss(batch, bundle, config).total;
}

}  // namespace cloud::train
