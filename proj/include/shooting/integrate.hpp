#pragma once

// Fixed-step explicit integration of slot bundles, generic over the carrier
// type (Tensor for plain evaluation, Var for differentiable rollouts).

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "shooting/autodiff.hpp"
#include "shooting/tensor.hpp"

namespace shooting {

enum class Scheme { euler, rk4 };

struct IntegratorSpec {
  Scheme scheme = Scheme::rk4;
  double step = 0.1;
  double horizon = 1.0;
};

inline const char* scheme_name(Scheme s) { return s == Scheme::euler ? "euler" : "rk4"; }

template <typename T>
struct Bundle {
  std::vector<T> slots;

  Bundle() = default;
  explicit Bundle(std::vector<T> s) : slots(std::move(s)) {}
};

template <typename T>
Bundle<T> add_scaled(const Bundle<T>& y, double h, const Bundle<T>& d) {
  Bundle<T> out;
  out.slots.reserve(y.slots.size());
  for (std::size_t i = 0; i < y.slots.size(); ++i)
    out.slots.push_back(add(y.slots[i], scale(d.slots[i], h)));
  return out;
}

template <typename T>
bool bundle_finite(const Bundle<T>& y) {
  for (const T& s : y.slots)
    if (!all_finite(value_of(s))) return false;
  return true;
}

// One rhs evaluation. The rhs may publish the instantaneous weights and
// Hamiltonian through this side channel; stage 0 evaluations sit exactly on
// grid nodes.
template <typename T>
struct StageRecord {
  std::size_t step = 0;
  int stage = 0;
  double t = 0.0;
  std::vector<T> theta;
  T hamiltonian{};
  bool has_hamiltonian = false;
};

template <typename T>
struct Rollout {
  std::vector<double> times;           // grid nodes, times[0] = 0
  std::vector<Bundle<T>> states;       // grid states (present when recorded)
  std::vector<StageRecord<T>> stages;  // every rhs evaluation, in call order,
                                       // plus one final-node record
  Bundle<T> final_state;
  bool recorded = false;

  // records sitting on grid nodes (stage 0), one per node
  std::vector<const StageRecord<T>*> node_records() const {
    std::vector<const StageRecord<T>*> out;
    for (const auto& r : stages)
      if (r.stage == 0) out.push_back(&r);
    return out;
  }
};

// Node times for a fixed-step grid; the last step is shortened when the step
// does not divide the horizon (tolerance 1e-12).
inline std::vector<double> integration_grid(const IntegratorSpec& spec) {
  if (!(spec.step > 0.0)) throw ShapeError("integrator: step must be positive");
  if (!(spec.horizon > 0.0)) throw ShapeError("integrator: horizon must be positive");
  const double ratio = spec.horizon / spec.step;
  std::size_t n = static_cast<std::size_t>(std::llround(ratio));
  const double tol = 1e-12 * std::max(1.0, std::abs(spec.horizon));
  std::vector<double> times;
  if (n >= 1 && std::abs(static_cast<double>(n) * spec.step - spec.horizon) <= tol) {
    times.reserve(n + 1);
    for (std::size_t k = 0; k < n; ++k) times.push_back(static_cast<double>(k) * spec.step);
  } else {
    n = static_cast<std::size_t>(ratio);  // full steps, then a short one
    for (std::size_t k = 0; k <= n; ++k) times.push_back(static_cast<double>(k) * spec.step);
  }
  times.push_back(spec.horizon);
  return times;
}

template <typename T>
using Rhs = std::function<Bundle<T>(double, const Bundle<T>&, StageRecord<T>&)>;

template <typename T>
Rollout<T> integrate(const Rhs<T>& rhs, const Bundle<T>& y0, const IntegratorSpec& spec,
                     bool record = true) {
  Rollout<T> out;
  out.times = integration_grid(spec);
  out.recorded = record;
  const std::size_t nsteps = out.times.size() - 1;
  out.stages.reserve(nsteps * (spec.scheme == Scheme::rk4 ? 4 : 1) + 1);

  Bundle<T> y = y0;
  if (record) out.states.push_back(y);

  auto eval = [&](std::size_t step, int stage, double t, const Bundle<T>& s) -> Bundle<T> {
    StageRecord<T> rec;
    rec.step = step;
    rec.stage = stage;
    rec.t = t;
    Bundle<T> d = rhs(t, s, rec);
    out.stages.push_back(std::move(rec));
    return d;
  };

  for (std::size_t k = 0; k < nsteps; ++k) {
    const double t = out.times[k];
    const double h = out.times[k + 1] - t;
    if (spec.scheme == Scheme::euler) {
      Bundle<T> k1 = eval(k, 0, t, y);
      y = add_scaled(y, h, k1);
    } else {
      Bundle<T> k1 = eval(k, 0, t, y);
      Bundle<T> k2 = eval(k, 1, t + 0.5 * h, add_scaled(y, 0.5 * h, k1));
      Bundle<T> k3 = eval(k, 2, t + 0.5 * h, add_scaled(y, 0.5 * h, k2));
      Bundle<T> k4 = eval(k, 3, t + h, add_scaled(y, h, k3));
      Bundle<T> incr;
      incr.slots.reserve(y.slots.size());
      for (std::size_t i = 0; i < y.slots.size(); ++i) {
        T s = add(add(k1.slots[i], scale(add(k2.slots[i], k3.slots[i]), 2.0)), k4.slots[i]);
        incr.slots.push_back(s);
      }
      y = add_scaled(y, h / 6.0, incr);
    }
    if (!bundle_finite(y))
      throw DivergenceError(k, "integrate: non-finite state after step " + std::to_string(k));
    if (record) out.states.push_back(y);
  }

  // final-node auxiliaries (theta/H at t = T); the derivative is discarded
  eval(nsteps, 0, out.times.back(), y);

  out.final_state = std::move(y);
  return out;
}

}  // namespace shooting
