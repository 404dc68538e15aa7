// SPDX-License-Identifier: Apache-2.0
#include "stgd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace stgd {

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw DimensionError("Tensor::matrix: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({m, n}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_string(shape_));
  }
  return shape_[axis];
}

std::span<double> Tensor::row(std::size_t i) {
  return std::span<double>(data_).subspan(i * shape_[1], shape_[1]);
}

std::span<const double> Tensor::row(std::size_t i) const {
  return std::span<const double>(data_).subspan(i * shape_[1], shape_[1]);
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

std::size_t Tensor::rows() const {
  if (shape_.empty() || shape_.back() == 0) return 0;
  return data_.size() / shape_.back();
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }
Tensor operator*(double s, Tensor a) { return a *= s; }

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Tensor& t, const std::string& what) {
  if (!all_finite(t)) throw NumericError("non-finite values in " + what);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  mac::add(static_cast<std::uint64_t>(m) * k * n);
  Tensor c({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      const double* bp = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul_tn: leading dimensions disagree " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
  mac::add(static_cast<std::uint64_t>(m) * k * n);
  Tensor c({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* bp = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = pa[p * m + i];
      double* ci = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: trailing dimensions disagree " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
  mac::add(static_cast<std::uint64_t>(m) * k * n);
  Tensor c({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = pb + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      pc[i * n + j] = s;
    }
  }
  return c;
}

Tensor softmax_rows(const Tensor& x) {
  require_rank2(x, "softmax_rows");
  require_finite(x, "softmax_rows input");
  Tensor y = x;
  const std::size_t n = x.dim(1);
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    auto r = y.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      s += v;
    }
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < n; ++j) r[j] *= inv;
  }
  return y;
}

Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "softmax_rows_backward");
  Tensor dx({y.dim(0), y.dim(1)});
  for (std::size_t i = 0; i < y.dim(0); ++i) {
    auto yr = y.row(i);
    auto gr = dy.row(i);
    double inner = 0.0;
    for (std::size_t j = 0; j < yr.size(); ++j) inner += yr[j] * gr[j];
    auto out = dx.row(i);
    for (std::size_t j = 0; j < yr.size(); ++j) out[j] = yr[j] * (gr[j] - inner);
  }
  return dx;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  require_same_shape(x, dy, "relu_backward");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(x[i] > 0.0)) dx[i] = 0.0;
  return dx;
}

Tensor silu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v / (1.0 + std::exp(-v));
  return y;
}

Tensor silu_backward(const Tensor& x, const Tensor& dy) {
  require_same_shape(x, dy, "silu_backward");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x[i]));
    dx[i] *= s * (1.0 + x[i] * (1.0 - s));
  }
  return dx;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_rank2(a, "slice_cols");
  if (begin + count > a.dim(1)) throw DimensionError("slice_cols: range exceeds columns");
  Tensor out({a.dim(0), count});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = a.at(i, begin + j);
  return out;
}

void add_cols(Tensor& dst, const Tensor& src, std::size_t begin) {
  require_rank2(dst, "add_cols");
  require_rank2(src, "add_cols");
  if (dst.dim(0) != src.dim(0) || begin + src.dim(1) > dst.dim(1)) {
    throw DimensionError("add_cols: " + shape_string(src.shape()) + " does not fit into " +
                         shape_string(dst.shape()));
  }
  for (std::size_t i = 0; i < src.dim(0); ++i)
    for (std::size_t j = 0; j < src.dim(1); ++j) dst.at(i, begin + j) += src.at(i, j);
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_cols");
  require_rank2(b, "concat_cols");
  if (a.dim(0) != b.dim(0)) throw DimensionError("concat_cols: row counts differ");
  Tensor out({a.dim(0), a.dim(1) + b.dim(1)});
  add_cols(out, a, 0);
  add_cols(out, b, a.dim(1));
  return out;
}

Parameter::Parameter(std::string name_, std::string block_, Tensor value_)
    : name(std::move(name_)), block(std::move(block_)), value(std::move(value_)),
      grad(value.shape()) {}

void Parameter::zero_grad() { std::fill(grad.data().begin(), grad.data().end(), 0.0); }

Parameter& ParameterStore::add(const std::string& name, const std::string& block, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  params_.emplace_back(name, block, std::move(value));
  return params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

bool operator==(const ParameterStore& a, const ParameterStore& b) {
  if (a.params_.size() != b.params_.size()) return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i) {
    const auto& p = a.params_[i];
    const auto& q = b.params_[i];
    if (p.name != q.name || p.block != q.block || !(p.value == q.value)) return false;
  }
  return true;
}

Tensor linear_forward(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2 || x.rank() == 0 || x.cols() != w.dim(0)) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(w.shape()));
  }
  Tensor y = matmul(x.reshaped({x.rows(), x.cols()}), w);
  Shape out = x.shape();
  out.back() = w.dim(1);
  return y.reshaped(std::move(out));
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = linear_forward(x, w);
  const std::size_t n = w.dim(1);
  if (b.size() != n) {
    throw DimensionError("linear: bias " + shape_string(b.shape()) + " does not match output width " +
                         std::to_string(n));
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i % n];
  return y;
}

Tensor linear_forward(const Tensor& x, const Parameter& w, const Parameter& b) {
  return linear_forward(x, w.value, b.value);
}

Tensor linear_backward(const Tensor& x, const Tensor& dy, const Tensor& w, Tensor& dw,
                       Tensor* db) {
  const Tensor x2 = x.reshaped({x.rows(), x.cols()});
  const Tensor dy2 = dy.reshaped({dy.rows(), dy.cols()});
  dw += matmul_tn(x2, dy2);
  if (db) {
    const std::size_t n = dy2.dim(1);
    for (std::size_t i = 0; i < dy2.size(); ++i) (*db)[i % n] += dy2[i];
  }
  return matmul_nt(dy2, w).reshaped(x.shape());
}

namespace mac {
namespace {
thread_local bool g_enabled = false;
thread_local std::uint64_t g_count = 0;
}  // namespace

void add(std::uint64_t n) noexcept {
  if (g_enabled) g_count += n;
}
std::uint64_t count() noexcept { return g_count; }
bool enabled() noexcept { return g_enabled; }

CounterScope::CounterScope() : previous_(g_enabled), start_(g_count) { g_enabled = true; }
CounterScope::~CounterScope() { g_enabled = previous_; }
std::uint64_t CounterScope::count() const noexcept { return g_count - start_; }
}  // namespace mac

}  // namespace stgd
