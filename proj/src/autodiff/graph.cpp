#include "jst/autodiff/graph.hpp"

#include "jst/error.hpp"

namespace jst::ad {

bool Graph::needs_grad(std::initializer_list<const Tensor*> operands) const {
  if (!recording()) return false;
  for (const Tensor* t : operands) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void Graph::record(std::function<void()> backward_rule) {
  if (consumed_) throw GraphError("recording onto a graph that already ran backward");
  tape_.push_back(std::move(backward_rule));
}

void Graph::backward(Tensor& loss) {
  if (consumed_) throw GraphError("backward called twice on the same graph");
  if (!recording()) throw GraphError("backward on an inference-mode graph");
  if (loss.size() != 1) throw ContractError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  consumed_ = true;
  if (!loss.requires_grad()) {
    tape_.clear();
    return;
  }
  loss.mutable_grad()[0] += 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  tape_.clear();
  tape_.shrink_to_fit();
}

}  // namespace jst::ad
