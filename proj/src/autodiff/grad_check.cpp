#include "jst/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "jst/error.hpp"

namespace jst::ad {

namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
  Graph g(Graph::Mode::inference);
  const Tensor y = f(g, x);
  if (y.size() != 1) throw ContractError("grad_check: function output is not scalar");
  return y.item();
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw ContractError("grad_check: eps must lie in [1e-6, 1e-3]");

  Tensor leaf = Tensor(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  std::vector<double> analytic;
  {
    Graph g;
    Tensor y = f(g, leaf);
    if (y.size() != 1) throw ContractError("grad_check: function output is not scalar");
    g.backward(y);
    analytic.assign(leaf.grad().begin(), leaf.grad().end());
  }

  Tensor probe = x.detached_copy();
  auto values = probe.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const double up = evaluate(f, probe);
    values[i] = saved - eps;
    const double down = evaluate(f, probe);
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(numeric) + 1e-8));
  }
  return worst;
}

}  // namespace jst::ad
