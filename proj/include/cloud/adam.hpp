#pragma once

#include <cstdint>
#include <vector>

#include "cloud/tensor.hpp"

namespace cloud::ad {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Coupled L2: added to the gradient as weight_decay * param before the moment update.
  double weight_decay = 1e-6;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t step = 0;
};

struct AdamUpdate {
  std::vector<Tensor> params;
  AdamState state;
};

/// Zero moments shaped like `params`.
AdamState make_adam_state(const std::vector<Tensor>& params, const AdamConfig& config);

/// One bias-corrected Adam update. Pure: the inputs are left untouched.
AdamUpdate adam_step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                     const AdamState& state);

/// In-place form used by the trainer; numerically identical to adam_step.
void adam_step_inplace(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                       AdamState& state);

}  // namespace cloud::ad
