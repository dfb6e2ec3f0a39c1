#pragma once

#include <functional>

#include "jst/autodiff/graph.hpp"
#include "jst/autodiff/tensor.hpp"

namespace jst::ad {

using ScalarFn = std::function<Tensor(Graph&, const Tensor&)>;

// Compares the taped gradient of f at x against central differences:
// max over components of |analytic - numeric| / (|numeric| + 1e-8).
// f must return a single-element tensor and be deterministic in its input.
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-6);

}  // namespace jst::ad
