#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "cloud/dataset.hpp"
#include "cloud/losses.hpp"
#include "cloud/models.hpp"

namespace cloud::train {

struct TrainConfig {
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  double weight_decay = 1e-6;
  std::size_t epochs = 30;
  double temperature = 0.1;
  double decoder_weight = 1.0;
  model::Variant variant = model::Variant::FI;
  Objective objective = Objective::Contrastive;
  Denominator denominator = Denominator::PaperLiteral;
  rope::ObsKind obs_kind = rope::ObsKind::Coords;
  std::uint64_t seed = 0;

  void validate() const;
  LossConfig loss() const { return {temperature, decoder_weight, denominator, objective}; }
};

struct EpochLoss {
  std::size_t epoch = 0;
  double forward = 0.0;
  double inverse = 0.0;
  double decoder = 0.0;
  double total = 0.0;
};

struct TrainResult {
  model::ModelBundle bundle;
  std::vector<EpochLoss> curve;
};

/// Raised when a batch loss stops being finite.
class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(std::size_t epoch, std::size_t batch);
  std::size_t epoch;
  std::size_t batch;
};

/// Records of `split` that have a successor in their trajectory; the successor
/// supplies a_{t+1} for the inverse loss.
std::vector<std::size_t> training_samples(const data::Dataset& dataset, data::Split split);

Batch make_batch(const data::Dataset& dataset, std::span<const std::size_t> indices,
                 rope::ObsKind kind);

using EpochCallback = std::function<void(const EpochLoss&)>;

/// Minibatch Adam on total_loss. Epoch e shuffles with stream ("shuffle", e);
/// a trailing batch with fewer than 2 samples is dropped.
TrainResult train(const data::Dataset& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Mean cosine similarity of forward predictions to their positive and to the
/// in-batch negatives, over batches of `batch_size` drawn in order from `split`.
struct Alignment {
  double positive = 0.0;
  double negative = 0.0;
  double gap() const { return positive - negative; }
};

Alignment forward_alignment(const model::ModelBundle& bundle, const data::Dataset& dataset,
                            data::Split split, std::size_t batch_size = 128);

}  // namespace cloud::train
