// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensors and the handful of kernels the denoiser is
// built from. Every kernel is a pure function with a fixed loop order, so the
// same inputs always produce bit-identical outputs.
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stgd/errors.hpp"

namespace stgd {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
  /// Rank-2 tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Row view of a rank-2 tensor.
  std::span<double> row(std::size_t i);
  std::span<const double> row(std::size_t i) const;

  /// Same data, new shape; element count must match.
  Tensor reshaped(Shape shape) const;

  /// Number of rows when the tensor is viewed as [prod(leading) x last].
  std::size_t rows() const;
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);
Tensor operator*(double s, Tensor a);

/// Elementwise product.
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
double sum(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Throws NumericError naming `what` if any element is NaN or Inf.
void require_finite(const Tensor& t, const std::string& what);
bool all_finite(const Tensor& t);

/// a[m x k] * b[k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T * b for a[k x m], b[k x n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a * b^T for a[m x k], b[n x k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);
/// Vector-Jacobian product of softmax_rows given its output `y`.
Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy);

Tensor relu(const Tensor& x);
/// dy masked by (x > 0).
Tensor relu_backward(const Tensor& x, const Tensor& dy);

Tensor silu(const Tensor& x);
Tensor silu_backward(const Tensor& x, const Tensor& dy);

/// Copy of columns [begin, begin + count) of a rank-2 tensor.
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
/// dst[:, begin:begin+src.cols] += src.
void add_cols(Tensor& dst, const Tensor& src, std::size_t begin);
/// Horizontal concatenation of rank-2 tensors with equal row counts.
Tensor concat_cols(const Tensor& a, const Tensor& b);

/// Learnable tensor with its gradient accumulator. `block` names the kind of
/// learnable block the parameter belongs to (used by the gradient-check
/// coverage gate).
struct Parameter {
  std::string name;
  std::string block;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string name, std::string block, Tensor value);
  void zero_grad();
};

/// Ordered, name-unique collection of parameters. Iteration order is the
/// registration order, which fixes the optimizer's update order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, const std::string& block, Tensor value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  const Tensor& value(const std::string& name) const { return get(name).value; }
  Tensor& grad(const std::string& name) { return get(name).grad; }

  std::vector<Parameter>& params() noexcept { return params_; }
  const std::vector<Parameter>& params() const noexcept { return params_; }
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

  friend bool operator==(const ParameterStore& a, const ParameterStore& b);

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

/// y = x * w + b over the trailing dimension of x (any rank >= 1).
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor linear_forward(const Tensor& x, const Parameter& w, const Parameter& b);
/// Bias-free variant.
Tensor linear_forward(const Tensor& x, const Tensor& w);

/// Accumulates dW (and dB when non-null) and returns dX for linear_forward.
Tensor linear_backward(const Tensor& x, const Tensor& dy, const Tensor& w, Tensor& dw,
                       Tensor* db);

/// Multiply-accumulate counter used to cross-check analytic flop estimates.
/// Counting is off unless a MacCounter scope is alive on the current thread.
namespace mac {
void add(std::uint64_t n) noexcept;
std::uint64_t count() noexcept;
bool enabled() noexcept;

class CounterScope {
 public:
  CounterScope();
  ~CounterScope();
  CounterScope(const CounterScope&) = delete;
  CounterScope& operator=(const CounterScope&) = delete;
  std::uint64_t count() const noexcept;

 private:
  bool previous_;
  std::uint64_t start_;
};
}  // namespace mac

}  // namespace stgd
