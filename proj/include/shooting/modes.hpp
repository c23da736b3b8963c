#pragma once

// The four model variants behind one evaluation interface. All of them run
// the UpDown field; they differ in where theta(t) comes from:
//   static_direct          one learned constant theta
//   static_with_particles  theta solved from the ensemble at t=0, then frozen
//   dynamic_with_particles theta tracks the evolving ensemble (shooting)
//   dynamic_direct         piecewise-constant theta, one block per time slice

#include <cstdint>
#include <string>
#include <vector>

#include "shooting/models.hpp"

namespace shooting {

enum class Mode : std::uint8_t {
  static_direct,
  static_with_particles,
  dynamic_with_particles,
  dynamic_direct,
};

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::static_direct: return "static_direct";
    case Mode::static_with_particles: return "static_with_particles";
    case Mode::dynamic_with_particles: return "dynamic_with_particles";
    case Mode::dynamic_direct: return "dynamic_direct";
  }
  return "?";
}

inline Mode mode_from_name(const std::string& s) {
  for (Mode m : {Mode::static_direct, Mode::static_with_particles, Mode::dynamic_with_particles,
                 Mode::dynamic_direct})
    if (s == mode_name(m)) return m;
  throw ConfigError("unknown mode: " + s);
}

inline bool mode_uses_particles(Mode m) {
  return m == Mode::static_with_particles || m == Mode::dynamic_with_particles;
}

struct ModeSpec {
  Mode mode = Mode::dynamic_with_particles;
  std::size_t blocks = 1;  // > 1 only for dynamic_direct
  std::size_t alpha = 1;
  std::size_t particles = 0;  // K, particle modes only
  std::size_t d = 1;
  Act act = Act::relu;
  PenaltyWeights weights;

  bool uses_particles() const { return mode_uses_particles(mode); }

  UpDownModel model() const {
    UpDownModel m;
    m.d = d;
    m.alpha = alpha;
    m.act = act;
    m.weights = weights;
    return m;
  }

  void validate() const {
    if (alpha < 1) throw ConfigError("mode: alpha must be >= 1");
    if (d < 1) throw ConfigError("mode: d must be >= 1");
    if (blocks != 1 && mode != Mode::dynamic_direct)
      throw ConfigError("mode: blocks > 1 requires dynamic_direct");
    if (blocks < 1) throw ConfigError("mode: blocks must be >= 1");
    if (uses_particles() && particles == 0)
      throw ConfigError("mode: particle count required for particle modes");
    if (!uses_particles() && particles != 0)
      throw ConfigError("mode: particle count is only valid for particle modes");
  }
};

// Learnable-parameter count. Particle modes carry 2K(alpha+1)d ensemble
// numbers; direct modes carry the raw theta blocks. The affine lift
// (alpha*d*(d+1) numbers) is shared across blocks and counted once. The
// classification readout, when present, is not included.
inline long long count_parameters(const ModeSpec& spec) {
  const long long d = static_cast<long long>(spec.d);
  const long long a = static_cast<long long>(spec.alpha);
  const long long lift = a * d * (d + 1);
  const long long theta_block = a * d * d + d + a * d * d + a * d + a * a * d * d;
  switch (spec.mode) {
    case Mode::static_with_particles:
    case Mode::dynamic_with_particles:
      return 2 * static_cast<long long>(spec.particles) * (a + 1) * d + lift;
    case Mode::static_direct:
      return theta_block + lift;
    case Mode::dynamic_direct:
      return static_cast<long long>(spec.blocks) * theta_block + lift;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// parameters and evaluation
// ---------------------------------------------------------------------------

template <typename T>
struct Readout {
  T weight;  // d
  T bias;    // scalar
};

template <typename T>
struct ModeParams {
  Ensemble<T> ensemble;                      // particle modes
  std::vector<UpDownTheta<T>> theta_blocks;  // direct modes
  AffineLift<T> lift;
  bool has_readout = false;
  Readout<T> readout;
};

template <typename T>
struct Trajectory {
  std::vector<Rollout<T>> segments;

  const Bundle<T>& final_state() const { return segments.back().final_state; }
  const T& final_x() const { return final_state().slots[slot::x]; }

  // data states (slot x) at every grid node, shared block boundaries
  // reported once
  std::vector<const T*> grid_x() const {
    std::vector<const T*> out;
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const auto& states = segments[s].states;
      for (std::size_t k = (s == 0 ? 0 : 1); k < states.size(); ++k)
        out.push_back(&states[k].slots[slot::x]);
    }
    return out;
  }
};

inline Ctx<Tensor> ctx_for(const Tensor&) { return TensorCtx{}; }
inline Ctx<Var> ctx_for(const Var& v) { return VarCtx{v.tape()}; }

template <typename T>
Trajectory<T> mode_forward(const ModeParams<T>& params, const T& x0, const ModeSpec& spec,
                           const IntegratorSpec& integ, bool record = true) {
  spec.validate();
  const UpDownModel model = spec.model();
  const Ctx<T> ctx = ctx_for(x0);
  T v0 = apply_lift(x0, params.lift);

  Trajectory<T> traj;
  switch (spec.mode) {
    case Mode::dynamic_with_particles: {
      Bundle<T> y0;
      y0.slots = {x0, v0, params.ensemble.q, params.ensemble.p};
      traj.segments.push_back(
          integrate<T>(make_shooting_rhs<T>(model), y0, integ, record));
      break;
    }
    case Mode::static_with_particles: {
      UpDownTheta<T> th = solve_theta(params.ensemble, model, ctx);
      Bundle<T> y0;
      y0.slots = {x0, v0};
      traj.segments.push_back(integrate<T>(make_updown_data_rhs(th, model), y0, integ, record));
      break;
    }
    case Mode::static_direct: {
      Bundle<T> y0;
      y0.slots = {x0, v0};
      traj.segments.push_back(
          integrate<T>(make_updown_data_rhs(params.theta_blocks[0], model), y0, integ, record));
      break;
    }
    case Mode::dynamic_direct: {
      if (params.theta_blocks.size() != spec.blocks)
        throw ConfigError("mode_forward: theta block count mismatch");
      const double block_len = integ.horizon / static_cast<double>(spec.blocks);
      const double steps = block_len / integ.step;
      if (std::abs(steps - std::llround(steps)) > 1e-9)
        throw ConfigError("mode_forward: integrator step must divide the block length");
      Bundle<T> y = {};
      y.slots = {x0, v0};
      IntegratorSpec seg = integ;
      seg.horizon = block_len;
      for (std::size_t b = 0; b < spec.blocks; ++b) {
        traj.segments.push_back(
            integrate<T>(make_updown_data_rhs(params.theta_blocks[b], model), y, seg, record));
        y = traj.segments.back().final_state;
      }
      break;
    }
  }
  return traj;
}

// plain copy of a taped trajectory, for logging and metrics
inline Trajectory<Tensor> snapshot(const Trajectory<Var>& traj) {
  Trajectory<Tensor> out;
  for (const auto& seg : traj.segments) {
    Rollout<Tensor> s;
    s.times = seg.times;
    s.recorded = seg.recorded;
    for (const auto& st : seg.states) {
      Bundle<Tensor> b;
      for (const Var& v : st.slots) b.slots.push_back(v.value());
      s.states.push_back(std::move(b));
    }
    for (const auto& rec : seg.stages) {
      StageRecord<Tensor> r;
      r.step = rec.step;
      r.stage = rec.stage;
      r.t = rec.t;
      for (const Var& v : rec.theta) r.theta.push_back(v.value());
      if (rec.has_hamiltonian) {
        r.hamiltonian = rec.hamiltonian.value();
        r.has_hamiltonian = true;
      }
      s.stages.push_back(std::move(r));
    }
    for (const Var& v : seg.final_state.slots) s.final_state.slots.push_back(v.value());
    out.segments.push_back(std::move(s));
  }
  return out;
}

inline Trajectory<Tensor> snapshot(const Trajectory<Tensor>& traj) { return traj; }

}  // namespace shooting
