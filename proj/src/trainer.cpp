#include "cloud/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cloud/adam.hpp"
#include "cloud/observation.hpp"
#include "cloud/rng.hpp"

namespace cloud::train {

TrainingDivergedError::TrainingDivergedError(std::size_t e, std::size_t b)
    : std::runtime_error("loss became non-finite at epoch " + std::to_string(e) + ", batch " +
                         std::to_string(b)),
      epoch(e),
      batch(b) {}

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  if (learning_rate < 0.0) throw std::invalid_argument("learning_rate must be >= 0");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (decoder_weight < 0.0) throw std::invalid_argument("decoder_weight must be >= 0");
  if (objective == Objective::Regression && variant != model::Variant::FI) {
    throw std::invalid_argument("regression objective needs variant fi");
  }
}

std::vector<std::size_t> training_samples(const data::Dataset& dataset, data::Split split) {
  std::vector<std::size_t> out;
  for (auto i : dataset.indices(split)) {
    if (dataset.successor(i) != nullptr) out.push_back(i);
  }
  return out;
}

Batch make_batch(const data::Dataset& dataset, std::span<const std::size_t> indices,
                 rope::ObsKind kind) {
  std::vector<const rope::RopeState*> now;
  std::vector<const rope::RopeState*> next;
  std::vector<rope::Action> actions;
  std::vector<rope::Action> next_actions;
  for (auto i : indices) {
    const auto& rec = dataset.records.at(i);
    const auto* succ = dataset.successor(i);
    if (succ == nullptr) {
      throw std::invalid_argument("record " + std::to_string(i) + " has no successor action");
    }
    now.push_back(&rec.state);
    next.push_back(&rec.next_state);
    actions.push_back(rec.action);
    next_actions.push_back(succ->action);
  }
  const auto size = dataset.env.image_size;
  return {rope::render_batch(now, kind, size), rope::render_batch(next, kind, size),
          model::actions_tensor(actions), model::actions_tensor(next_actions)};
}

TrainResult train(const data::Dataset& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  model::Architecture arch;
  arch.geom_count = dataset.env.geom_count;
  arch.image_size = dataset.env.image_size;
  TrainResult result{model::init_bundle(config.variant, config.obs_kind, config.seed, arch), {}};
  auto& bundle = result.bundle;

  auto samples = training_samples(dataset, data::Split::Train);
  if (config.epochs > 0 && samples.size() < 2) {
    throw std::invalid_argument("training split needs at least 2 usable transitions");
  }

  std::vector<Tensor> initial;
  for (const auto& p : bundle.parameters()) initial.push_back(*p.tensor);
  ad::AdamState adam = ad::make_adam_state(
      initial, {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
  const auto loss_config = config.loss();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng = make_rng(config.seed, "shuffle", epoch);
    std::shuffle(samples.begin(), samples.end(), rng);
    EpochLoss sums{epoch + 1};
    std::size_t batches = 0;
    for (std::size_t start = 0; start < samples.size(); start += config.batch_size) {
      const auto count = std::min(config.batch_size, samples.size() - start);
      if (count < 2) break;
      const Batch batch =
          make_batch(dataset, std::span(samples).subspan(start, count), config.obs_kind);

      ad::Graph graph;
      ad::Feed feed;
      auto bound = model::bind(graph, bundle);
      const auto inputs = batch_inputs(graph, batch, feed);
      const auto loss = total_loss(graph, bound, inputs, loss_config);
      graph.forward(feed);
      const double total = graph.value(loss.total).item();
      if (!std::isfinite(total)) throw TrainingDivergedError(epoch + 1, batches + 1);
      const auto grads = graph.backward(loss.total);

      auto params = bundle.parameters();
      std::vector<Tensor*> targets;
      std::vector<const Tensor*> grad_ptrs;
      for (std::size_t k = 0; k < params.size(); ++k) {
        targets.push_back(params[k].tensor);
        grad_ptrs.push_back(&grads.of(bound.parameters[k]));
      }
      ad::adam_step_inplace(targets, grad_ptrs, adam);

      if (loss.forward) sums.forward += graph.value(*loss.forward).item();
      if (loss.inverse) sums.inverse += graph.value(*loss.inverse).item();
      if (loss.decoder) sums.decoder += graph.value(*loss.decoder).item();
      sums.total += total;
      ++batches;
    }
    const double n = static_cast<double>(std::max<std::size_t>(batches, 1));
    EpochLoss mean{epoch + 1, sums.forward / n, sums.inverse / n, sums.decoder / n,
                   sums.total / n};
    result.curve.push_back(mean);
    if (on_epoch) on_epoch(mean);
  }
  return result;
}

Alignment forward_alignment(const model::ModelBundle& bundle, const data::Dataset& dataset,
                            data::Split split, std::size_t batch_size) {
  model::require_forward(bundle);
  const auto samples = training_samples(dataset, split);
  double pos_sum = 0.0;
  double neg_sum = 0.0;
  std::size_t pos_count = 0;
  std::size_t neg_count = 0;
  for (std::size_t start = 0; start + 2 <= samples.size(); start += batch_size) {
    const auto count = std::min(batch_size, samples.size() - start);
    const Batch batch = make_batch(dataset, std::span(samples).subspan(start, count),
                                   bundle.arch.obs_kind);
    ad::Graph graph;
    auto m = model::bind(graph, bundle);
    auto h_t = model::encode_state(graph, m, graph.constant(batch.observations));
    auto h_next = model::encode_state(graph, m, graph.constant(batch.next_observations));
    auto pred = model::forward_predict(graph, m, h_t,
                                       model::action_input(graph, m, graph.constant(batch.actions)));
    auto s_next = graph.cosine_pairwise(pred, h_next);
    auto s_now = graph.cosine_pairwise(pred, h_t);
    graph.forward();
    const auto& a = graph.value(s_next);
    const auto& b = graph.value(s_now);
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t j = 0; j < count; ++j) {
        if (i == j) {
          pos_sum += a.at(i, j);
          ++pos_count;
        } else {
          neg_sum += a.at(i, j) + b.at(i, j);
          neg_count += 2;
        }
      }
    }
  }
  if (pos_count == 0) throw std::invalid_argument("forward_alignment: split has fewer than 2 samples");
  return {pos_sum / static_cast<double>(pos_count), neg_sum / static_cast<double>(neg_count)};
}

}  // namespace cloud::train
