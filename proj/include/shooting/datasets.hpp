#pragma once

// Seeded generators for the desk-scale tasks: 1d function regression, the
// cubic-dynamics spiral, and two-annulus classification.

#include <cmath>
#include <vector>

#include "shooting/integrate.hpp"
#include "shooting/objective.hpp"
#include "shooting/random.hpp"

namespace shooting {

enum class FunctionKind : std::uint8_t { quadratic_like, cubic };

inline double function_value(FunctionKind kind, double x) {
  return kind == FunctionKind::quadratic_like ? x * x + 3.0 / (1.0 + x * x) : x * x * x;
}

inline Batch gen_function_1d(FunctionKind kind, std::size_t n, double lo, double hi, Rng& rng) {
  if (!(lo < hi)) throw ConfigError("gen_function_1d: empty range");
  Batch out;
  out.inputs = Tensor({n, 1});
  out.targets = Tensor({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(lo, hi);
    out.inputs(i, 0) = x;
    out.targets(i, 0) = function_value(kind, x);
  }
  return out;
}

// ---------------------------------------------------------------------------
// spiral
// ---------------------------------------------------------------------------

struct SpiralSpec {
  double horizon = 10.0;
  double step = 0.05;
  double snippet_len = 0.25;
  double x0 = 2.0, y0 = 0.0;
  double a00 = -0.1, a01 = 2.0, a10 = -2.0, a11 = -0.1;

  std::size_t snippet_steps() const {
    const double m = snippet_len / step;
    const auto r = static_cast<std::size_t>(std::llround(m));
    if (std::abs(m - static_cast<double>(r)) > 1e-9 || r == 0)
      throw ConfigError("spiral: snippet length must be a multiple of the step");
    return r;
  }
};

// xdot = A (x^3 componentwise)
inline Rhs<Tensor> spiral_rhs(const SpiralSpec& spec) {
  Tensor a = Tensor::matrix({{spec.a00, spec.a01}, {spec.a10, spec.a11}});
  return [a](double, const Bundle<Tensor>& y, StageRecord<Tensor>&) {
    const Tensor& x = y.slots[0];
    Tensor cubed = mul(mul(x, x), x);
    Bundle<Tensor> d;
    d.slots.push_back(matmul(cubed, transpose(a)));
    return d;
  };
}

// reference trajectory on the fixed grid, rows indexed by node
inline Tensor spiral_reference(const SpiralSpec& spec) {
  Bundle<Tensor> y0;
  y0.slots.push_back(Tensor::matrix({{spec.x0, spec.y0}}));
  auto roll = integrate<Tensor>(spiral_rhs(spec), y0, {Scheme::rk4, spec.step, spec.horizon});
  Tensor out({roll.states.size(), 2});
  for (std::size_t k = 0; k < roll.states.size(); ++k) {
    out(k, 0) = roll.states[k].slots[0](0, 0);
    out(k, 1) = roll.states[k].slots[0](0, 1);
  }
  return out;
}

struct SpiralData {
  Batch data;        // inputs n x 2; targets n x (steps*2), nodes 1..steps
  Tensor reference;  // (nodes) x 2 trace
  std::vector<double> arc_positions;  // arc length at each sampled snippet start
};

// Snippet starts drawn uniformly in arc length along the trace (the spiral
// is traversed at highly nonuniform speed, so uniform-in-index would
// oversample the slow tail).
inline SpiralData gen_spiral(std::size_t n_snippets, const SpiralSpec& spec, Rng& rng) {
  if (spec.snippet_len > spec.horizon) throw ConfigError("spiral: snippet longer than horizon");
  SpiralData out;
  out.reference = spiral_reference(spec);
  const std::size_t nodes = out.reference.shape[0];
  const std::size_t m = spec.snippet_steps();

  std::vector<double> cum(nodes, 0.0);
  for (std::size_t k = 1; k < nodes; ++k) {
    const double dx = out.reference(k, 0) - out.reference(k - 1, 0);
    const double dy = out.reference(k, 1) - out.reference(k - 1, 1);
    cum[k] = cum[k - 1] + std::sqrt(dx * dx + dy * dy);
  }
  const std::size_t last_start = nodes - 1 - m;
  const double usable = cum[last_start + 1];  // starts fall in segments [0, last_start]

  out.data.inputs = Tensor({n_snippets, 2});
  out.data.targets = Tensor({n_snippets, m * 2});
  out.arc_positions.reserve(n_snippets);
  for (std::size_t i = 0; i < n_snippets; ++i) {
    const double s = rng.uniform(0.0, usable);
    std::size_t k = 0;
    while (k < last_start && cum[k + 1] <= s) ++k;
    out.arc_positions.push_back(cum[k]);
    out.data.inputs(i, 0) = out.reference(k, 0);
    out.data.inputs(i, 1) = out.reference(k, 1);
    for (std::size_t j = 1; j <= m; ++j) {
      out.data.targets(i, 2 * (j - 1)) = out.reference(k + j, 0);
      out.data.targets(i, 2 * (j - 1) + 1) = out.reference(k + j, 1);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// concentric circles
// ---------------------------------------------------------------------------

struct AnnulusSpec {
  double inner_lo = 0.0, inner_hi = 1.0;
  double outer_lo = 1.5, outer_hi = 2.5;

  void validate() const {
    if (!(inner_lo >= 0.0 && inner_lo <= inner_hi && outer_lo <= outer_hi))
      throw ConfigError("circles: malformed radius intervals");
    if (inner_hi >= outer_lo) throw ConfigError("circles: radius intervals must be disjoint");
  }
};

inline Batch gen_concentric_circles(std::size_t n_per_class, const AnnulusSpec& spec, Rng& rng) {
  spec.validate();
  Batch out;
  out.inputs = Tensor({2 * n_per_class, 2});
  out.targets = Tensor({2 * n_per_class});
  for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
    const bool outer = i >= n_per_class;
    const double r = outer ? rng.uniform(spec.outer_lo, spec.outer_hi)
                           : rng.uniform(spec.inner_lo, spec.inner_hi);
    const double phi = rng.uniform(0.0, 2.0 * 3.141592653589793238462643383279502884);
    out.inputs(i, 0) = r * std::cos(phi);
    out.inputs(i, 1) = r * std::sin(phi);
    out.targets.data[i] = outer ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace shooting
