#pragma once

// Plain-tensor SPD solves used for penalty matrices and the assembled
// compatibility systems. Not taped: everything solved here is constant with
// respect to the learnable parameters.

#include <cmath>

#include "shooting/tensor.hpp"

namespace shooting {

inline Tensor cholesky_factor(const Tensor& m) {
  if (m.rank() != 2 || m.shape[0] != m.shape[1])
    throw ShapeError("cholesky: square matrix required");
  const std::size_t n = m.shape[0];
  Tensor l({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = m(i, j);
      for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
      if (i == j) {
        if (acc <= 0.0) throw ShapeError("cholesky: matrix not positive definite");
        l(i, i) = std::sqrt(acc);
      } else {
        l(i, j) = acc / l(j, j);
      }
    }
  }
  return l;
}

// Solve A x = b for SPD A given its Cholesky factor L (A = L L^T).
inline Tensor cholesky_solve(const Tensor& l, const Tensor& b) {
  const std::size_t n = l.shape[0];
  if (b.rank() != 1 || b.shape[0] != n) throw ShapeError("cholesky_solve: shape mismatch");
  Tensor y({n});
  for (std::size_t i = 0; i < n; ++i) {
    double acc = b.data[i];
    for (std::size_t k = 0; k < i; ++k) acc -= l(i, k) * y.data[k];
    y.data[i] = acc / l(i, i);
  }
  Tensor x({n});
  for (std::size_t i = n; i-- > 0;) {
    double acc = y.data[i];
    for (std::size_t k = i + 1; k < n; ++k) acc -= l(k, i) * x.data[k];
    x.data[i] = acc / l(i, i);
  }
  return x;
}

inline Tensor spd_inverse(const Tensor& m) {
  const Tensor l = cholesky_factor(m);
  const std::size_t n = m.shape[0];
  Tensor inv({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    Tensor e({n});
    e.data[j] = 1.0;
    Tensor col = cholesky_solve(l, e);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col.data[i];
  }
  return inv;
}

}  // namespace shooting
