#include "jst/autodiff/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "jst/error.hpp"

namespace jst::ad {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : storage_(std::make_shared<Storage>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_size(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string(shape));
  }
  storage_->shape = std::move(shape);
  storage_->data = std::move(data);
  storage_->requires_grad = requires_grad;
  if (requires_grad) storage_->grad.assign(storage_->data.size(), 0.0);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data, bool requires_grad) {
  return Tensor({rows, cols}, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!storage_) throw ContractError("use of undefined tensor");
  return storage_->shape;
}

std::size_t Tensor::size() const { return shape_size(shape()); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.size() == 1) return 1;
  if (s.size() == 2) return s[0];
  throw DimensionError("matrix view requested for tensor of shape " + shape_string(s));
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() == 1) return s[0];
  if (s.size() == 2) return s[1];
  throw DimensionError("matrix view requested for tensor of shape " + shape_string(s));
}

std::span<const double> Tensor::data() const {
  shape();
  return storage_->data;
}

std::span<double> Tensor::mutable_data() {
  shape();
  return storage_->data;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor of shape " + shape_string(shape()));
  return storage_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return storage_->data[r * cols() + c]; }

bool Tensor::requires_grad() const { return storage_ && storage_->requires_grad; }

std::span<const double> Tensor::grad() const {
  shape();
  if (storage_->grad.empty()) storage_->grad.assign(storage_->data.size(), 0.0);
  return storage_->grad;
}

std::span<double> Tensor::mutable_grad() {
  shape();
  if (storage_->grad.empty()) storage_->grad.assign(storage_->data.size(), 0.0);
  return storage_->grad;
}

bool Tensor::grad_touched() const { return storage_ && storage_->grad_touched; }

void Tensor::mark_grad_touched() {
  if (storage_) storage_->grad_touched = true;
}

void Tensor::zero_grad() {
  shape();
  std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
  storage_->grad_touched = false;
}

Tensor Tensor::detached_copy() const {
  return Tensor(shape(), std::vector<double>(storage_->data.begin(), storage_->data.end()), false);
}

}  // namespace jst::ad
