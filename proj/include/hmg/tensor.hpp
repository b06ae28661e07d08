#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hmg/error.hpp"

namespace hmg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major float64 array. Rank 0 is not used; scalars are shape [1].
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape();
    cols_ = inner_extent(shape_);
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    cols_ = inner_extent(shape_);
    if (shape_size(shape_) != data_.size()) {
      throw Error(ErrorKind::kShapeMismatch, "tensor shape " + shape_str(shape_) + " holds " +
                                                 std::to_string(shape_size(shape_)) + " values, got " +
                                                 std::to_string(data_.size()));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return shape_.empty(); }

  // Leading dimension and the product of the rest.
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return cols_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  double item() const {
    if (data_.size() != 1) throw Error(ErrorKind::kShapeMismatch, "item() on tensor " + shape_str(shape_));
    return data_[0];
  }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool v) {
    requires_grad_ = v;
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_shape() const {
    for (auto d : shape_) {
      if (d == 0) throw Error(ErrorKind::kShapeMismatch, "zero extent in shape " + shape_str(shape_));
    }
  }

  static std::size_t inner_extent(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t k = 1; k < s.size(); ++k) n *= s[k];
    return n;
  }

  Shape shape_;
  std::size_t cols_ = 1;
  std::vector<double> data_;
  bool requires_grad_ = false;
};

struct Parameter {
  Tensor value;
  Tensor grad;
  // Non-trainable entries hold state such as batch-norm running statistics.
  bool trainable = true;
};

using GradTable = std::map<std::string, Tensor>;

// Named parameters, each with a gradient slot of identical shape.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor value, bool trainable = true) {
    if (params_.count(name)) throw Error(ErrorKind::kInvalidArgument, "duplicate parameter " + name);
    value.set_requires_grad(trainable);
    Tensor grad = Tensor::zeros_like(value);
    auto [it, _] = params_.emplace(name, Parameter{std::move(value), std::move(grad), trainable});
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error(ErrorKind::kInvalidArgument, "no parameter named " + name);
    return it->second;
  }
  const Parameter& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error(ErrorKind::kInvalidArgument, "no parameter named " + name);
    return it->second;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.grad.fill(0.0);
  }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) {
      if (!trainable_only || p.trainable) n += p.value.size();
    }
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Copies values (not gradients) from another store with identical layout.
  void assign_values(const ParamStore& other) {
    for (auto& [name, p] : params_) p.value = other.at(name).value;
  }

 private:
  std::map<std::string, Parameter> params_;
};

}  // namespace hmg
