#pragma once

// Dense row-major float64 tensor and the handful of kernels the attention
// and guidance code is built from. Everything is a pure function of its
// inputs; summation order is fixed so results are bit-reproducible.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dcag/error.hpp"

namespace dcag {

using Shape = std::vector<std::size_t>;

inline std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_volume(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_to_string(shape_));
    }
  }

  /// Builds a 2-D tensor from nested rows; all rows must have equal length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& row : rows) {
      if (row.size() != n) throw ShapeError("ragged rows in Tensor::from_rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({m, n}, std::move(data));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Same data viewed under a new shape of equal volume.
  Tensor reshaped(Shape shape) const {
    if (shape_volume(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  /// Rows [begin, end) along axis 0, keeping trailing extents.
  Tensor slice_rows(std::size_t begin, std::size_t end) const {
    if (rank() == 0 || begin > end || end > shape_[0]) {
      throw ShapeError("row slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                       ") out of range for " + shape_to_string(shape_));
    }
    const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
    Shape out_shape = shape_;
    out_shape[0] = end - begin;
    return Tensor(std::move(out_shape),
                  std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                      data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
  }

  /// Overwrites rows starting at `begin` with the rows of `block`.
  void assign_rows(std::size_t begin, const Tensor& block) {
    if (rank() == 0 || block.rank() != rank() ||
        !std::equal(shape_.begin() + 1, shape_.end(), block.shape_.begin() + 1) ||
        begin + block.shape_[0] > shape_[0]) {
      throw ShapeError("cannot assign block " + shape_to_string(block.shape_) + " at row " +
                       std::to_string(begin) + " of " + shape_to_string(shape_));
    }
    const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
    std::copy(block.data_.begin(), block.data_.end(),
              data_.begin() + static_cast<std::ptrdiff_t>(begin * stride));
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline std::ostream& operator<<(std::ostream& os, const Tensor& t) {
  os << "Tensor" << shape_to_string(t.shape()) << '{';
  const std::size_t shown = std::min<std::size_t>(t.size(), 16);
  for (std::size_t i = 0; i < shown; ++i) os << (i ? ", " : "") << t[i];
  if (shown < t.size()) os << ", ...";
  return os << '}';
}

/// Bit-pattern equality: distinguishes -0.0 from 0.0 and compares NaN payloads.
inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(x[i]) != std::bit_cast<std::uint64_t>(y[i])) return false;
  }
  return true;
}

inline double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + " expects a rank-" + std::to_string(rank) + " tensor, got " +
                     shape_to_string(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + " shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "add", [](double x, double y) { return x + y; });
}

inline Tensor subtract(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "subtract", [](double x, double y) { return x - y; });
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
  return out;
}

/// a·x + b·y elementwise.
inline Tensor axpby(double a, const Tensor& x, double b, const Tensor& y) {
  return detail::zip(x, y, "axpby", [a, b](double u, double v) { return a * u + b * v; });
}

/// Adds a [1×d] row to every row of an [s×d] tensor.
inline Tensor add_row(const Tensor& x, const Tensor& row) {
  detail::require_rank(x, 2, "add_row");
  if (row.rank() != 2 || row.dim(0) != 1 || row.dim(1) != x.dim(1)) {
    throw ShapeError("add_row: row " + shape_to_string(row.shape()) + " does not broadcast over " +
                     shape_to_string(x.shape()));
  }
  Tensor out(x.shape());
  const std::size_t d = x.dim(1);
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    for (std::size_t j = 0; j < d; ++j) out(i, j) = x(i, j) + row[j];
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  Tensor out({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < a.dim(1); ++j) out(j, i) = a(i, j);
  }
  return out;
}

/// Standard matrix product. Each output entry accumulates over k in
/// increasing order starting from 0.0, so results are bit-reproducible.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul dimension mismatch: " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const auto ad = a.data();
  const auto bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = od.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      const double* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

/// Row-wise softmax with per-row max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (n == 0) throw DomainError("softmax_rows: empty row dimension");
  if (!x.all_finite()) throw DomainError("softmax_rows: non-finite logits");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    double mx = x(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      sum += out(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= sum;
  }
  return out;
}

/// Arithmetic mean over the leading (token) axis: [s×d] -> [1×d].
inline Tensor mean_over_tokens(const Tensor& x) {
  detail::require_rank(x, 2, "mean_over_tokens");
  const std::size_t s = x.dim(0), d = x.dim(1);
  if (s == 0) throw DomainError("mean_over_tokens: no tokens");
  Tensor out({1, d});
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[j] += x(i, j);
  }
  for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(s);
  return out;
}

inline double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

inline double l2_norm(const Tensor& x) { return l2_norm(x.data()); }

/// Per-row Euclidean norms: [s×d] -> [s×1].
inline Tensor rowwise_l2(const Tensor& x) {
  detail::require_rank(x, 2, "rowwise_l2");
  const std::size_t s = x.dim(0), d = x.dim(1);
  Tensor out({s, 1});
  for (std::size_t i = 0; i < s; ++i) out[i] = l2_norm(x.data().subspan(i * d, d));
  return out;
}

}  // namespace dcag
