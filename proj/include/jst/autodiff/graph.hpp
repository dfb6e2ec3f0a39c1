#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "jst/autodiff/tensor.hpp"

namespace jst::ad {

// Tape of recorded operations for one forward pass. Each record is the local
// backward rule of an op, holding its operands by handle. backward() replays
// the tape in exact reverse order, then frees it.
class Graph {
 public:
  enum class Mode { record, inference };

  explicit Graph(Mode mode = Mode::record) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return mode_ == Mode::record; }
  std::size_t size() const noexcept { return tape_.size(); }

  // True when the op producing an output from these operands must be taped.
  bool needs_grad(std::initializer_list<const Tensor*> operands) const;

  void record(std::function<void()> backward_rule);

  // Seeds d(loss)/d(loss) = 1 and runs the tape backwards. The loss must be
  // a single-element tensor. A second call without re-recording throws.
  void backward(Tensor& loss);

 private:
  Mode mode_;
  bool consumed_ = false;
  std::vector<std::function<void()>> tape_;
};

}  // namespace jst::ad
