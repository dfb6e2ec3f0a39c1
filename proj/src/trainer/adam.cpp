#include "jst/trainer/adam.hpp"

#include <algorithm>
#include <cmath>

#include "jst/error.hpp"

namespace jst::trainer {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("Adam epsilon must be > 0");
}

double learning_rate(const AdamConfig& config, std::size_t step) {
  if (step == 0) throw ContractError("learning_rate: steps count from 1");
  const double s = static_cast<double>(step);
  if (config.warmup == 0) return config.lr / std::sqrt(s);
  const double w = static_cast<double>(config.warmup);
  return config.lr * std::min(s / w, std::sqrt(w / s));
}

void adam_update(std::span<double> params, std::span<const double> grads, Moments& state, double lr,
                 const AdamConfig& config) {
  if (params.size() != grads.size()) throw DimensionError("adam_update: parameter/gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_update: state size mismatch");
  const bool all_zero = std::all_of(grads.begin(), grads.end(), [](double g) { return g == 0.0; });
  if (all_zero && state.steps == 0) return;
  ++state.steps;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.steps));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grads[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
  }
}

Adam::Adam(AdamConfig config) : config_(config) { config_.validate(); }

double Adam::step(model::ParameterMap& params) {
  ++steps_;
  const double lr = learning_rate(config_, steps_);
  for (auto& [name, tensor] : params) {
    if (!tensor.requires_grad() || !tensor.grad_touched()) continue;
    adam_update(tensor.mutable_data(), tensor.grad(), state_[name], lr, config_);
  }
  for (auto& [name, tensor] : params) tensor.zero_grad();
  return lr;
}

const Moments* Adam::moments(const std::string& name) const {
  auto it = state_.find(name);
  return it == state_.end() ? nullptr : &it->second;
}

}  // namespace jst::trainer
