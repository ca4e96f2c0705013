#include "cloud/adam.hpp"

#include <cmath>

namespace cloud::ad {

AdamState make_adam_state(const std::vector<Tensor>& params, const AdamConfig& config) {
  AdamState state;
  state.config = config;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.shape(), 0.0);
    state.second_moment.emplace_back(p.shape(), 0.0);
  }
  return state;
}

void adam_step_inplace(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                       AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(state.first_moment[i]) ||
        !params[i]->same_shape(state.second_moment[i])) {
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i) + " " +
                       to_string(params[i]->shape()) + " vs gradient " +
                       to_string(grads[i]->shape()));
    }
  }
  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i]->data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double grad = g[k] + c.weight_decay * p[k];
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * grad;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * grad * grad;
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p[k] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

AdamUpdate adam_step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                     const AdamState& state) {
  AdamUpdate out{params, state};
  std::vector<Tensor*> p;
  std::vector<const Tensor*> g;
  for (auto& t : out.params) p.push_back(&t);
  for (const auto& t : grads) g.push_back(&t);
  adam_step_inplace(p, g, out.state);
  return out;
}

}  // namespace cloud::ad
