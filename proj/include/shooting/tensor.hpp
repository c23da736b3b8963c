#pragma once

// Dense row-major tensors (rank 0..2) in 64-bit precision, plus the small
// kernel set every layer of the library is built from. The taped ops in
// autodiff.hpp call exactly these kernels, so values computed with and
// without a tape agree bitwise.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "shooting/errors.hpp"

namespace shooting {

enum class Act { relu, tanh };

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(numel_of(shape), 0.0) {}
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape)) throw ShapeError("tensor data/shape mismatch");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor vector(std::initializer_list<double> v) {
    return Tensor({v.size()}, std::vector<double>(v));
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows_init) {
    std::size_t r = rows_init.size();
    std::size_t c = r ? rows_init.begin()->size() : 0;
    Tensor t({r, c});
    std::size_t i = 0;
    for (const auto& row : rows_init) {
      if (row.size() != c) throw ShapeError("ragged matrix initializer");
      for (double v : row) t.data[i++] = v;
    }
    return t;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return rank() == 2 ? shape[0] : (rank() == 1 ? shape[0] : 1); }
  std::size_t cols() const { return rank() == 2 ? shape[1] : 1; }

  double& operator()(std::size_t i) { return data[i]; }
  double operator()(std::size_t i) const { return data[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline std::string shape_str(const Tensor& t) {
  std::string s = "(";
  for (std::size_t i = 0; i < t.shape.size(); ++i)
    s += (i ? "," : "") + std::to_string(t.shape[i]);
  return s + ")";
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.data[i] - b.data[i];
  return out;
}

inline Tensor neg(const Tensor& a) {
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = -a.data[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = c * a.data[i];
  return out;
}

// t * s with s a rank-0 tensor.
inline Tensor scale_by(const Tensor& t, const Tensor& s) {
  if (s.rank() != 0) throw ShapeError("scale_by: scalar operand must be rank 0");
  return scale(t, s.data[0]);
}

// Supported matmul shapes: (m,k)x(k,n)->(m,n) and (m,k)x(k,)->(m,).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2) throw ShapeError("matmul: left operand must be rank 2, got " + shape_str(a));
  const std::size_t m = a.shape[0], k = a.shape[1];
  if (b.rank() == 2) {
    if (b.shape[0] != k)
      throw ShapeError("matmul: inner dims " + shape_str(a) + " vs " + shape_str(b));
    const std::size_t n = b.shape[1];
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a.data.data() + i * k;
      double* orow = out.data.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = b.data.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
    return out;
  }
  if (b.rank() == 1) {
    if (b.shape[0] != k)
      throw ShapeError("matmul: inner dims " + shape_str(a) + " vs " + shape_str(b));
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a.data.data() + i * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * b.data[p];
      out.data[i] = acc;
    }
    return out;
  }
  throw ShapeError("matmul: right operand must be rank 1 or 2, got " + shape_str(b));
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: rank-2 only, got " + shape_str(a));
  Tensor out({a.shape[1], a.shape[0]});
  for (std::size_t i = 0; i < a.shape[0]; ++i)
    for (std::size_t j = 0; j < a.shape[1]; ++j) out(j, i) = a(i, j);
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.data[i] > 0.0 ? a.data[i] : 0.0;
  return out;
}

// g .* 1[x > 0]; the relu subgradient at 0 is taken as 0.
inline Tensor relu_mask_mul(const Tensor& g, const Tensor& x) {
  check_same_shape(g, x, "relu_mask_mul");
  Tensor out(g.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = x.data[i] > 0.0 ? g.data[i] : 0.0;
  return out;
}

inline Tensor tanh(const Tensor& a) {
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = std::tanh(a.data[i]);
  return out;
}

inline Tensor sigmoid(const Tensor& a) {
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double z = a.data[i];
    out.data[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  return out;
}

inline Tensor activation(const Tensor& a, Act kind) {
  return kind == Act::relu ? relu(a) : tanh(a);
}

inline Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data) acc += v;
  return Tensor::scalar(acc);
}

inline Tensor bcast(const Tensor& s, const std::vector<std::size_t>& target_shape) {
  if (s.rank() != 0) throw ShapeError("bcast: source must be rank 0");
  return Tensor::full(target_shape, s.data[0]);
}

inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  if (m.rank() != 2 || v.rank() != 1 || v.shape[0] != m.shape[1])
    throw ShapeError("add_rowvec: " + shape_str(m) + " + " + shape_str(v));
  Tensor out(m.shape);
  for (std::size_t i = 0; i < m.shape[0]; ++i)
    for (std::size_t j = 0; j < m.shape[1]; ++j) out(i, j) = m(i, j) + v.data[j];
  return out;
}

inline Tensor colsum(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("colsum: rank-2 only");
  Tensor out({m.shape[1]});
  for (std::size_t i = 0; i < m.shape[0]; ++i)
    for (std::size_t j = 0; j < m.shape[1]; ++j) out.data[j] += m(i, j);
  return out;
}

inline Tensor rowbcast(const Tensor& v, std::size_t nrows) {
  if (v.rank() != 1) throw ShapeError("rowbcast: rank-1 only");
  Tensor out({nrows, v.shape[0]});
  for (std::size_t i = 0; i < nrows; ++i)
    for (std::size_t j = 0; j < v.shape[0]; ++j) out(i, j) = v.data[j];
  return out;
}

inline Tensor reshape(const Tensor& a, std::vector<std::size_t> s) {
  if (Tensor::numel_of(s) != a.numel()) throw ShapeError("reshape: element count mismatch");
  return Tensor(std::move(s), a.data);
}

inline Tensor slice_cols(const Tensor& m, std::size_t c0, std::size_t c1) {
  if (m.rank() != 2 || c0 > c1 || c1 > m.shape[1]) throw ShapeError("slice_cols: bad range");
  Tensor out({m.shape[0], c1 - c0});
  for (std::size_t i = 0; i < m.shape[0]; ++i)
    for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = m(i, j);
  return out;
}

// Place m into columns [c0, c0+m.cols) of an otherwise-zero matrix with
// `total` columns.
inline Tensor pad_cols(const Tensor& m, std::size_t c0, std::size_t total) {
  if (m.rank() != 2 || c0 + m.shape[1] > total) throw ShapeError("pad_cols: bad range");
  Tensor out({m.shape[0], total});
  for (std::size_t i = 0; i < m.shape[0]; ++i)
    for (std::size_t j = 0; j < m.shape[1]; ++j) out(i, c0 + j) = m(i, j);
  return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[0] != b.shape[0])
    throw ShapeError("concat_cols: " + shape_str(a) + " vs " + shape_str(b));
  Tensor out({a.shape[0], a.shape[1] + b.shape[1]});
  for (std::size_t i = 0; i < a.shape[0]; ++i) {
    for (std::size_t j = 0; j < a.shape[1]; ++j) out(i, j) = a(i, j);
    for (std::size_t j = 0; j < b.shape[1]; ++j) out(i, a.shape[1] + j) = b(i, j);
  }
  return out;
}

// sum_i softplus(z_i) - y_i * z_i, the numerically stable form of binary
// cross-entropy on logits with labels y in {0,1}.
inline Tensor bce_logits_sum(const Tensor& z, const Tensor& y) {
  check_same_shape(z, y, "bce_logits_sum");
  double acc = 0.0;
  for (std::size_t i = 0; i < z.numel(); ++i) {
    const double zi = z.data[i];
    const double softplus = zi > 0.0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
    acc += softplus - y.data[i] * zi;
  }
  return Tensor::scalar(acc);
}

inline Tensor dot(const Tensor& a, const Tensor& b) { return sum_all(mul(a, b)); }

inline double frobenius_norm_sq(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.data) acc += v * v;
  return acc;
}

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace shooting
