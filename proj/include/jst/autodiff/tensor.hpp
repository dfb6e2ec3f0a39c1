#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace jst::ad {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major array of doubles. A Tensor is a cheap handle: copies share
// storage, which is how parameters are tied between model paths.
//
// Rank-1 tensors of length n behave as 1×n row vectors in matrix ops.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                       bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(storage_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Writes bypass the graph; reserved for initialization and optimizers.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  // True once any backward pass has accumulated into this tensor since the
  // last zero_grad().
  bool grad_touched() const;
  void mark_grad_touched();
  void zero_grad();

  bool same_storage(const Tensor& other) const noexcept { return storage_ == other.storage_; }
  // Fresh storage with the same values; never requires grad.
  Tensor detached_copy() const;

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    bool grad_touched = false;
  };
  std::shared_ptr<Storage> storage_;
};

}  // namespace jst::ad
