#include "xraft/adam.hpp"

#include <cmath>

#include "xraft/errors.hpp"

namespace xraft {

AdamState::AdamState(const std::vector<Tensor>& params, AdamConfig cfg) : config(cfg) {
  if (!(config.learning_rate > 0.0)) throw ConfigError("adam: learning rate must be positive");
  if (config.beta1 < 0.0 || config.beta1 >= 1.0 || config.beta2 < 0.0 || config.beta2 >= 1.0) {
    throw ConfigError("adam: betas must lie in [0, 1)");
  }
  if (!(config.epsilon > 0.0)) throw ConfigError("adam: epsilon must be positive");
  first_moment.reserve(params.size());
  second_moment.reserve(params.size());
  for (const auto& p : params) {
    first_moment.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    second_moment.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw ShapeError("adam: parameter list does not match optimizer state");
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) continue;
    auto values = p.mutable_values();
    auto grad = p.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != values.size()) throw ShapeError("adam: moment shape does not match parameter " + std::to_string(i));
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad[k];
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      values[k] = round_to_precision(values[k] - c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon));
    }
  }
}

}  // namespace xraft
