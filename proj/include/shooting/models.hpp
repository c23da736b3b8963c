#pragma once

// Vector fields, quadratic weight penalties, the compatibility solve that
// turns a particle ensemble into instantaneous weights, and the assembled
// shooting right-hand sides.
//
// Conventions. Batches are row-major: one sample per row. An UpDown particle
// lives in the lifted space of dimension (alpha+1)*d, its position/momentum
// rows split into an x-part (first d columns) and a v-part. The
// compatibility equation is solved with the sign dR/dtheta = sum_j
// d(p_j^T f(q_j))/dtheta; learned momenta absorb the overall sign. The
// Hamiltonian reported here is the generator of the particle flow,
//   H = sum_j p_j^T f(q_j, theta) - R(theta),
// so qdot = dH/dp and pdot = -dH/dq, and at the compatible theta its value
// equals the kinetic energy R(theta).

#include <cstddef>
#include <functional>
#include <variant>
#include <vector>

#include "shooting/autodiff.hpp"
#include "shooting/integrate.hpp"
#include "shooting/linalg.hpp"
#include "shooting/tensor.hpp"

namespace shooting {

// ---------------------------------------------------------------------------
// carrier context: materializes constants for Tensor- and Var-typed code
// ---------------------------------------------------------------------------

struct TensorCtx {
  Tensor constant(Tensor t) const { return t; }
};

struct VarCtx {
  Tape* tape;
  Var constant(Tensor t) const { return tape->constant(std::move(t)); }
};

template <typename T>
struct CtxOf;
template <>
struct CtxOf<Tensor> {
  using type = TensorCtx;
};
template <>
struct CtxOf<Var> {
  using type = VarCtx;
};
template <typename T>
using Ctx = typename CtxOf<T>::type;

// ---------------------------------------------------------------------------
// parameter types
// ---------------------------------------------------------------------------

struct PenaltyWeights {
  double t1 = 1.0, b1 = 1.0, t2 = 1.0, b2 = 1.0, t3 = 10.0;
};

template <typename T>
struct UpDownTheta {
  T t1;  // d x alpha*d
  T b1;  // d
  T t2;  // alpha*d x d
  T b2;  // alpha*d
  T t3;  // alpha*d x alpha*d

  template <typename F>
  void for_each(F&& f) const {
    f(t1);
    f(b1);
    f(t2);
    f(b2);
    f(t3);
  }
};

template <typename T>
struct LinearFieldTheta {
  T a;  // d x d
  T b;  // d

  template <typename F>
  void for_each(F&& f) const {
    f(a);
    f(b);
  }
};

// Positive-definite penalty matrices for the linear field; inverses are
// precomputed once and enter rollouts as constants.
struct LinearPenalty {
  Tensor m_a, m_b, m_a_inv, m_b_inv;

  static LinearPenalty scaled_identity(std::size_t d, double ca = 1.0, double cb = 1.0) {
    LinearPenalty p;
    p.m_a = Tensor({d, d});
    p.m_b = Tensor({d, d});
    for (std::size_t i = 0; i < d; ++i) {
      p.m_a(i, i) = ca;
      p.m_b(i, i) = cb;
    }
    p.m_a_inv = spd_inverse(p.m_a);
    p.m_b_inv = spd_inverse(p.m_b);
    return p;
  }
  static LinearPenalty general(Tensor ma, Tensor mb) {
    LinearPenalty p;
    p.m_a_inv = spd_inverse(ma);
    p.m_b_inv = spd_inverse(mb);
    p.m_a = std::move(ma);
    p.m_b = std::move(mb);
    return p;
  }
};

struct LinearModel {
  std::size_t d = 1;
  Act act = Act::relu;
  LinearPenalty penalty = LinearPenalty::scaled_identity(1);
  std::size_t state_dim() const { return d; }
};

struct UpDownModel {
  std::size_t d = 1;
  std::size_t alpha = 1;
  Act act = Act::relu;
  PenaltyWeights weights;
  std::size_t hidden_dim() const { return alpha * d; }
  std::size_t state_dim() const { return (alpha + 1) * d; }
};

template <typename T>
struct Ensemble {
  T q;  // K x S
  T p;  // K x S
  std::size_t count() const { return value_of(q).shape[0]; }
};

template <typename T>
struct AffineLift {
  T weight;  // alpha*d x d
  T bias;    // alpha*d
};

// v(0) = lift.weight x(0) + lift.bias, row-wise over the batch
template <typename T>
T apply_lift(const T& x_rows, const AffineLift<T>& lift) {
  return add_rowvec(matmul(x_rows, transpose(lift.weight)), lift.bias);
}

// ---------------------------------------------------------------------------
// fields
// ---------------------------------------------------------------------------

// f(x) = A sigma(x) + b applied to each row of x_rows
template <typename T>
T linear_field(const T& x_rows, const LinearFieldTheta<T>& th, Act act) {
  return add_rowvec(matmul(activation(x_rows, act), transpose(th.a)), th.b);
}

template <typename T>
struct UpDownDeriv {
  T xdot;  // n x d
  T vdot;  // n x alpha*d
};

// xdot = theta1 sigma(v) + b1,  vdot = theta2 x + b2 + theta3 sigma(v)
template <typename T>
UpDownDeriv<T> updown_field(const T& x_rows, const T& v_rows, const UpDownTheta<T>& th, Act act) {
  T sv = activation(v_rows, act);
  UpDownDeriv<T> out;
  out.xdot = add_rowvec(matmul(sv, transpose(th.t1)), th.b1);
  out.vdot = add_rowvec(add(matmul(x_rows, transpose(th.t2)), matmul(sv, transpose(th.t3))), th.b2);
  return out;
}

// ---------------------------------------------------------------------------
// penalties
// ---------------------------------------------------------------------------

template <typename T>
T penalty_value(const LinearFieldTheta<T>& th, const LinearModel& model, const Ctx<T>& ctx) {
  T ma = ctx.constant(model.penalty.m_a);
  T tr_a = sum_all(mul(th.a, matmul(ma, th.a)));  // Tr(A^T M_A A)
  T mb_b = matmul(ctx.constant(model.penalty.m_b), th.b);
  T b_quad = sum_all(mul(th.b, mb_b));
  return scale(add(tr_a, b_quad), 0.5);
}

template <typename T>
T penalty_value(const UpDownTheta<T>& th, const UpDownModel& model, const Ctx<T>&) {
  const PenaltyWeights& w = model.weights;
  T acc = scale(sum_all(mul(th.t1, th.t1)), 0.5 * w.t1);
  acc = add(acc, scale(sum_all(mul(th.b1, th.b1)), 0.5 * w.b1));
  acc = add(acc, scale(sum_all(mul(th.t2, th.t2)), 0.5 * w.t2));
  acc = add(acc, scale(sum_all(mul(th.b2, th.b2)), 0.5 * w.b2));
  acc = add(acc, scale(sum_all(mul(th.t3, th.t3)), 0.5 * w.t3));
  return acc;
}

// ---------------------------------------------------------------------------
// compatibility solve: theta from the ensemble
// ---------------------------------------------------------------------------

template <typename T>
void check_ensemble(const Ensemble<T>& e) {
  if (value_of(e.q).rank() != 2 || value_of(e.q).shape[0] == 0)
    throw DegenerateEnsembleError("solve_theta: ensemble has no particles");
}

// M_A A = sum_j p_j sigma(q_j)^T,  M_b b = sum_j p_j
template <typename T>
LinearFieldTheta<T> solve_theta(const Ensemble<T>& e, const LinearModel& model, const Ctx<T>& ctx) {
  check_ensemble(e);
  LinearFieldTheta<T> th;
  T cross = matmul(transpose(e.p), activation(e.q, model.act));
  th.a = matmul(ctx.constant(model.penalty.m_a_inv), cross);
  th.b = matmul(ctx.constant(model.penalty.m_b_inv), colsum(e.p));
  return th;
}

// w1 th1 = sum_j p_xj sigma(v_j)^T      w_b1 b1 = sum_j p_xj
// w2 th2 = sum_j p_vj x_j^T             w_b2 b2 = sum_j p_vj
// w3 th3 = sum_j p_vj sigma(v_j)^T
template <typename T>
UpDownTheta<T> solve_theta(const Ensemble<T>& e, const UpDownModel& model, const Ctx<T>&) {
  check_ensemble(e);
  const std::size_t d = model.d, s = model.state_dim();
  T qx = slice_cols(e.q, 0, d);
  T qv = slice_cols(e.q, d, s);
  T px = slice_cols(e.p, 0, d);
  T pv = slice_cols(e.p, d, s);
  T sv = activation(qv, model.act);
  const PenaltyWeights& w = model.weights;
  UpDownTheta<T> th;
  th.t1 = scale(matmul(transpose(px), sv), 1.0 / w.t1);
  th.b1 = scale(colsum(px), 1.0 / w.b1);
  th.t2 = scale(matmul(transpose(pv), qx), 1.0 / w.t2);
  th.b2 = scale(colsum(pv), 1.0 / w.b2);
  th.t3 = scale(matmul(transpose(pv), sv), 1.0 / w.t3);
  return th;
}

// ---------------------------------------------------------------------------
// Hamiltonian
// ---------------------------------------------------------------------------

// field evaluated on the particle positions, as K x S rows
template <typename T>
T particle_field(const Ensemble<T>& e, const LinearFieldTheta<T>& th, const LinearModel& model) {
  return linear_field(e.q, th, model.act);
}

template <typename T>
T particle_field(const Ensemble<T>& e, const UpDownTheta<T>& th, const UpDownModel& model) {
  const std::size_t d = model.d, s = model.state_dim();
  T qx = slice_cols(e.q, 0, d);
  T qv = slice_cols(e.q, d, s);
  UpDownDeriv<T> f = updown_field(qx, qv, th, model.act);
  return concat_cols(f.xdot, f.vdot);
}

// H = sum_j p_j^T f(q_j, theta) - R(theta)
template <typename T, typename Theta, typename Model>
T hamiltonian(const Ensemble<T>& e, const Theta& th, const Model& model, const Ctx<T>& ctx) {
  T f = particle_field(e, th, model);
  return sub(sum_all(mul(e.p, f)), penalty_value(th, model, ctx));
}

// ---------------------------------------------------------------------------
// shooting right-hand sides
// ---------------------------------------------------------------------------
// Bundle layout: linear model {X, Q, P}; UpDown model {X, V, Q, P}. The data
// block X (and V) may have zero rows.

namespace slot {
inline constexpr std::size_t x = 0;
inline constexpr std::size_t v = 1;
inline constexpr std::size_t linear_q = 1;
inline constexpr std::size_t linear_p = 2;
inline constexpr std::size_t updown_q = 2;
inline constexpr std::size_t updown_p = 3;
}  // namespace slot

template <typename Model>
struct ShootingTraits;

template <>
struct ShootingTraits<LinearModel> {
  static constexpr std::size_t q_slot = slot::linear_q;
  static constexpr std::size_t p_slot = slot::linear_p;
};

template <>
struct ShootingTraits<UpDownModel> {
  static constexpr std::size_t q_slot = slot::updown_q;
  static constexpr std::size_t p_slot = slot::updown_p;
};

template <typename T, typename Model>
Ensemble<T> bundle_ensemble(const Bundle<T>& y) {
  return Ensemble<T>{y.slots[ShootingTraits<Model>::q_slot], y.slots[ShootingTraits<Model>::p_slot]};
}

template <typename T>
void record_theta(StageRecord<T>& rec, const LinearFieldTheta<T>& th) {
  rec.theta = {th.a, th.b};
}
template <typename T>
void record_theta(StageRecord<T>& rec, const UpDownTheta<T>& th) {
  rec.theta = {th.t1, th.b1, th.t2, th.b2, th.t3};
}

// Momenta evolve by -dH/dq, assembled by a reverse sweep on the live tape so
// the cost stays linear in the state size and the rollout remains
// differentiable end to end.
inline Bundle<Var> shooting_rhs(const Bundle<Var>& y, const LinearModel& model,
                                StageRecord<Var>& rec) {
  Tape* tape = y.slots[0].tape();
  VarCtx ctx{tape};
  Ensemble<Var> e = bundle_ensemble<Var, LinearModel>(y);
  LinearFieldTheta<Var> th = solve_theta(e, model, ctx);

  Var h = hamiltonian(e, th, model, ctx);
  Var pdot = neg(tape->gradients(h, {e.q})[0]);

  Bundle<Var> d;
  d.slots.resize(3);
  d.slots[slot::x] = linear_field(y.slots[slot::x], th, model.act);
  d.slots[slot::linear_q] = particle_field(e, th, model);
  d.slots[slot::linear_p] = pdot;

  record_theta(rec, th);
  rec.hamiltonian = h;
  rec.has_hamiltonian = true;
  return d;
}

inline Bundle<Var> shooting_rhs(const Bundle<Var>& y, const UpDownModel& model,
                                StageRecord<Var>& rec) {
  Tape* tape = y.slots[0].tape();
  VarCtx ctx{tape};
  Ensemble<Var> e = bundle_ensemble<Var, UpDownModel>(y);
  UpDownTheta<Var> th = solve_theta(e, model, ctx);

  Var h = hamiltonian(e, th, model, ctx);
  Var pdot = neg(tape->gradients(h, {e.q})[0]);

  UpDownDeriv<Var> data = updown_field(y.slots[slot::x], y.slots[slot::v], th, model.act);

  Bundle<Var> d;
  d.slots.resize(4);
  d.slots[slot::x] = data.xdot;
  d.slots[slot::v] = data.vdot;
  d.slots[slot::updown_q] = particle_field(e, th, model);
  d.slots[slot::updown_p] = pdot;

  record_theta(rec, th);
  rec.hamiltonian = h;
  rec.has_hamiltonian = true;
  return d;
}

// Plain-tensor evaluation goes through a scratch tape; kernels are shared,
// so values are bitwise identical to the taped path.
template <typename Model>
Bundle<Tensor> shooting_rhs(const Bundle<Tensor>& y, const Model& model,
                            StageRecord<Tensor>& rec) {
  Tape tape;
  Bundle<Var> yv;
  for (const Tensor& s : y.slots) yv.slots.push_back(tape.leaf(s));
  StageRecord<Var> vrec;
  Bundle<Var> dv = shooting_rhs(yv, model, vrec);
  Bundle<Tensor> d;
  for (const Var& s : dv.slots) d.slots.push_back(s.value());
  for (const Var& t : vrec.theta) rec.theta.push_back(t.value());
  if (vrec.has_hamiltonian) {
    rec.hamiltonian = vrec.hamiltonian.value();
    rec.has_hamiltonian = true;
  }
  return d;
}

template <typename T, typename Model>
Rhs<T> make_shooting_rhs(const Model& model) {
  return [model](double, const Bundle<T>& y, StageRecord<T>& rec) {
    return shooting_rhs(y, model, rec);
  };
}

// rhs for a fixed-weight UpDown flow (the direct modes and the frozen-theta
// particle mode): data only, no ensemble evolution.
template <typename T>
Rhs<T> make_updown_data_rhs(UpDownTheta<T> th, const UpDownModel& model) {
  return [th, model](double, const Bundle<T>& y, StageRecord<T>& rec) {
    UpDownDeriv<T> f = updown_field(y.slots[slot::x], y.slots[slot::v], th, model.act);
    Bundle<T> d;
    d.slots = {f.xdot, f.vdot};
    record_theta(rec, th);
    return d;
  };
}

// ---------------------------------------------------------------------------
// automatic route: assemble d H / d theta with the differentiation engine
// ---------------------------------------------------------------------------

namespace detail {

template <typename Model>
struct ThetaShapes;

template <>
struct ThetaShapes<LinearModel> {
  static std::vector<std::vector<std::size_t>> get(const LinearModel& m) {
    return {{m.d, m.d}, {m.d}};
  }
  static LinearFieldTheta<Var> pack(const std::vector<Var>& v) { return {v[0], v[1]}; }
  static LinearFieldTheta<Tensor> pack_values(const std::vector<Tensor>& v) {
    return {v[0], v[1]};
  }
};

template <>
struct ThetaShapes<UpDownModel> {
  static std::vector<std::vector<std::size_t>> get(const UpDownModel& m) {
    const std::size_t d = m.d, h = m.hidden_dim();
    return {{d, h}, {d}, {h, d}, {h}, {h, h}};
  }
  static UpDownTheta<Var> pack(const std::vector<Var>& v) { return {v[0], v[1], v[2], v[3], v[4]}; }
  static UpDownTheta<Tensor> pack_values(const std::vector<Tensor>& v) {
    return {v[0], v[1], v[2], v[3], v[4]};
  }
};

// convex form whose stationary point is the compatibility solution:
// R(theta) - sum_j p_j^T f(q_j, theta)
template <typename Model>
Var convex_theta_objective(Tape& tape, const Ensemble<Var>& e, const std::vector<Var>& theta_vars,
                           const Model& model) {
  VarCtx ctx{&tape};
  auto th = ThetaShapes<Model>::pack(theta_vars);
  return sub(penalty_value(th, model, ctx), sum_all(mul(e.p, particle_field(e, th, model))));
}

}  // namespace detail

// Residual of the compatibility equation at the given theta, assembled by
// the differentiation engine: max-norm of dR/dtheta - sum_j (df/dtheta)^T p_j.
template <typename Model, typename ThetaT>
double compatibility_residual(const Ensemble<Tensor>& e, const ThetaT& th, const Model& model) {
  Tape tape;
  Ensemble<Var> ev{tape.constant(e.q), tape.constant(e.p)};
  std::vector<Var> tvars;
  th.for_each([&](const Tensor& t) { tvars.push_back(tape.leaf(t)); });
  Var obj = detail::convex_theta_objective(tape, ev, tvars, model);
  auto grads = tape.gradients(obj, tvars);
  double r = 0.0;
  for (const Var& g : grads) r = std::max(r, max_abs(g.value()));
  return r;
}

// Solve the compatibility equation without using the closed form: build
// d H / d theta on a tape, extract the Hessian by a second differentiation
// pass, and solve the resulting linear system. The Hessian must be constant
// in theta (H strictly convex quadratic); models violating that are
// rejected.
template <typename Model>
auto auto_solve_theta(const Ensemble<Tensor>& e, const Model& model) {
  check_ensemble(e);
  const auto shapes = detail::ThetaShapes<Model>::get(model);

  Tape tape;
  Ensemble<Var> ev{tape.constant(e.q), tape.constant(e.p)};
  std::vector<Var> tvars;
  std::size_t dim = 0;
  for (const auto& s : shapes) {
    tvars.push_back(tape.leaf(Tensor::zeros(s)));
    dim += Tensor::numel_of(s);
  }
  Var obj = detail::convex_theta_objective(tape, ev, tvars, model);
  std::vector<Var> grad0 = tape.gradients(obj, tvars);

  // right-hand side: gradient at theta = 0 is -c for d H/d theta = M theta - c
  Tensor rhs({dim});
  {
    std::size_t off = 0;
    for (const Var& g : grad0)
      for (double v : g.value().data) rhs.data[off++] = -v;
  }

  // Hessian columns via a second reverse sweep per component
  Tensor hess({dim, dim});
  std::size_t col = 0;
  for (std::size_t part = 0; part < grad0.size(); ++part) {
    const std::vector<std::size_t> gshape = grad0[part].value().shape;  // copy: pushes reallocate
    for (std::size_t i = 0; i < Tensor::numel_of(gshape); ++i) {
      Tensor seed = Tensor::zeros(gshape);
      seed.data[i] = 1.0;
      Var comp = sum_all(mul(grad0[part], tape.constant(seed)));
      std::vector<Var> hrow = tape.gradients(comp, tvars);
      std::size_t off = 0;
      for (const Var& h : hrow)
        for (double v : h.value().data) hess(col, off++) = v;
      ++col;
    }
  }

  // symmetry is a structural property of a quadratic objective
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(hess(i, j) - hess(j, i)) > 1e-9)
        throw UnsupportedModelError("auto_solve_theta: hamiltonian is not quadratic in theta");

  Tensor l;
  try {
    l = cholesky_factor(hess);
  } catch (const ShapeError&) {
    throw UnsupportedModelError("auto_solve_theta: theta system is not positive definite");
  }
  Tensor flat = cholesky_solve(l, rhs);

  std::vector<Tensor> parts;
  std::size_t off = 0;
  for (const auto& s : shapes) {
    Tensor part(s);
    for (std::size_t i = 0; i < part.numel(); ++i) part.data[i] = flat.data[off++];
    parts.push_back(std::move(part));
  }
  return detail::ThetaShapes<Model>::pack_values(parts);
}

}  // namespace shooting
