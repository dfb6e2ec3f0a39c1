#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "jst/model/layers.hpp"

namespace jst::trainer {

struct AdamConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  std::size_t warmup = 200;

  void validate() const;
};

// lr * min(step / warmup, sqrt(warmup / step)) for step >= 1; peaks at lr
// when step == warmup. warmup == 0 gives lr / sqrt(step).
double learning_rate(const AdamConfig& config, std::size_t step);

struct Moments {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t steps = 0;
};

// One bias-corrected Adam update in place. A zero gradient leaves params and
// moments untouched.
void adam_update(std::span<double> params, std::span<const double> grads, Moments& state, double lr,
                 const AdamConfig& config);

// Per-tensor Adam over a parameter map. Tensors whose gradient was never
// touched since the last step keep both their values and their moments.
class Adam {
 public:
  explicit Adam(AdamConfig config);

  // Applies one update at the scheduled rate, then clears all gradients.
  // Returns the rate used.
  double step(model::ParameterMap& params);
  std::size_t steps() const noexcept { return steps_; }
  const Moments* moments(const std::string& name) const;

 private:
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace jst::trainer
