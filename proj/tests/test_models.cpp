#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "shooting/models.hpp"
#include "test_util.hpp"

using namespace shooting;
using testutil::random_tensor;

namespace {

double sigma(double v, Act act) { return act == Act::relu ? (v > 0 ? v : 0) : std::tanh(v); }

// hand-summed row oracle for the linear field
Tensor linear_field_oracle(const Tensor& x, const LinearFieldTheta<Tensor>& th, Act act) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.shape[0]; ++i)
    for (std::size_t r = 0; r < x.shape[1]; ++r) {
      double acc = th.b.data[r];
      for (std::size_t c = 0; c < x.shape[1]; ++c) acc += th.a(r, c) * sigma(x(i, c), act);
      out(i, r) = acc;
    }
  return out;
}

UpDownDeriv<Tensor> updown_field_oracle(const Tensor& x, const Tensor& v,
                                        const UpDownTheta<Tensor>& th, Act act) {
  const std::size_t n = x.shape[0], d = x.shape[1], h = v.shape[1];
  UpDownDeriv<Tensor> out{Tensor({n, d}), Tensor({n, h})};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      double acc = th.b1.data[a];
      for (std::size_t k = 0; k < h; ++k) acc += th.t1(a, k) * sigma(v(i, k), act);
      out.xdot(i, a) = acc;
    }
    for (std::size_t c = 0; c < h; ++c) {
      double acc = th.b2.data[c];
      for (std::size_t a = 0; a < d; ++a) acc += th.t2(c, a) * x(i, a);
      for (std::size_t k = 0; k < h; ++k) acc += th.t3(c, k) * sigma(v(i, k), act);
      out.vdot(i, c) = acc;
    }
  }
  return out;
}

Ensemble<Tensor> random_ensemble(std::mt19937_64& rng, std::size_t k, std::size_t s,
                                 double pscale = 0.5) {
  return {random_tensor(rng, {k, s}, -1.5, 1.5), random_tensor(rng, {k, s}, -pscale, pscale)};
}

UpDownModel random_updown_model(std::mt19937_64& rng, Act act) {
  UpDownModel m;
  m.d = 1 + rng() % 3;
  m.alpha = 1 + rng() % 4;
  m.act = act;
  return m;
}

struct HamDrift {
  double rel_drift;
  double max_residual;
};

template <typename Model>
HamDrift rollout_drift(const Ensemble<Tensor>& e0, const Model& model, double h, double T) {
  Bundle<Tensor> y0;
  if constexpr (std::is_same_v<Model, LinearModel>)
    y0.slots = {Tensor({0, model.d}), e0.q, e0.p};
  else
    y0.slots = {Tensor({0, model.d}), Tensor({0, model.hidden_dim()}), e0.q, e0.p};
  auto rhs = make_shooting_rhs<Tensor>(model);
  auto roll = integrate<Tensor>(rhs, y0, {Scheme::rk4, h, T});

  auto nodes = roll.node_records();
  const double h0 = nodes.front()->hamiltonian.data[0];
  HamDrift out{0.0, 0.0};
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const double hk = nodes[k]->hamiltonian.data[0];
    out.rel_drift = std::max(out.rel_drift, std::abs(hk - h0) / std::max(std::abs(h0), 1e-12));
    Ensemble<Tensor> ek =
        bundle_ensemble<Tensor, Model>(roll.recorded ? roll.states[k] : roll.final_state);
    if constexpr (std::is_same_v<Model, LinearModel>) {
      LinearFieldTheta<Tensor> th{nodes[k]->theta[0], nodes[k]->theta[1]};
      out.max_residual = std::max(out.max_residual, compatibility_residual(ek, th, model));
    } else {
      UpDownTheta<Tensor> th{nodes[k]->theta[0], nodes[k]->theta[1], nodes[k]->theta[2],
                             nodes[k]->theta[3], nodes[k]->theta[4]};
      out.max_residual = std::max(out.max_residual, compatibility_residual(ek, th, model));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("linear field examples") {
  TensorCtx ctx;
  LinearFieldTheta<Tensor> drift{Tensor::zeros({2, 2}), Tensor::vector({1, -1})};
  Tensor x = Tensor::matrix({{0.3, -0.7}});
  Tensor f = linear_field(x, drift, Act::relu);
  CHECK(f.data == std::vector<double>{1, -1});

  LinearFieldTheta<Tensor> ident{Tensor::matrix({{1, 0}, {0, 1}}), Tensor::zeros({2})};
  Tensor f2 = linear_field(Tensor::matrix({{-2, 3}}), ident, Act::relu);
  CHECK(f2.data == std::vector<double>{0, 3});

  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    LinearFieldTheta<Tensor> th{random_tensor(rng, {3, 3}), random_tensor(rng, {3})};
    Tensor xs = random_tensor(rng, {4, 3});
    for (Act act : {Act::relu, Act::tanh})
      CHECK(max_abs_diff(linear_field(xs, th, act), linear_field_oracle(xs, th, act)) < 1e-14);
  }
}

TEST_CASE("updown field examples") {
  UpDownTheta<Tensor> zero{Tensor::zeros({1, 1}), Tensor::zeros({1}), Tensor::zeros({1, 1}),
                           Tensor::zeros({1}), Tensor::zeros({1, 1})};
  auto f = updown_field(Tensor::matrix({{2.0}}), Tensor::matrix({{5.0}}), zero, Act::relu);
  CHECK(f.xdot.data == std::vector<double>{0});
  CHECK(f.vdot.data == std::vector<double>{0});

  UpDownTheta<Tensor> t2only = zero;
  t2only.t2 = Tensor::matrix({{1.0}});
  auto f2 = updown_field(Tensor::matrix({{2.0}}), Tensor::matrix({{5.0}}), t2only, Act::relu);
  CHECK(f2.xdot.data == std::vector<double>{0});
  CHECK(f2.vdot.data == std::vector<double>{2});

  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t d = 2, h = 4, n = 3;
    UpDownTheta<Tensor> th{random_tensor(rng, {d, h}), random_tensor(rng, {d}),
                           random_tensor(rng, {h, d}), random_tensor(rng, {h}),
                           random_tensor(rng, {h, h})};
    Tensor x = random_tensor(rng, {n, d});
    Tensor v = random_tensor(rng, {n, h});
    for (Act act : {Act::relu, Act::tanh}) {
      auto got = updown_field(x, v, th, act);
      auto want = updown_field_oracle(x, v, th, act);
      CHECK(max_abs_diff(got.xdot, want.xdot) < 1e-14);
      CHECK(max_abs_diff(got.vdot, want.vdot) < 1e-14);
    }
  }
}

TEST_CASE("solve_theta closed forms") {
  TensorCtx ctx;

  SECTION("zero momenta give zero theta") {
    UpDownModel m;
    m.d = 1;
    m.alpha = 2;
    Ensemble<Tensor> e{Tensor::full({3, 3}, 0.7), Tensor::zeros({3, 3})};
    auto th = solve_theta(e, m, ctx);
    th.for_each([&](const Tensor& t) { CHECK(max_abs(t) == 0.0); });
  }

  SECTION("rank-1 outer product") {
    LinearModel m;
    m.d = 2;
    m.penalty = LinearPenalty::scaled_identity(2);
    // sigma(q) = [0, 1] via q = [-0.5, 1]
    Ensemble<Tensor> e{Tensor::matrix({{-0.5, 1.0}}), Tensor::matrix({{1.0, 0.0}})};
    auto th = solve_theta(e, m, ctx);
    CHECK(th.a.data == std::vector<double>{0, 1, 0, 0});
    CHECK(th.b.data == std::vector<double>{1, 0});
  }

  SECTION("empty ensemble is degenerate") {
    LinearModel m;
    Ensemble<Tensor> e{Tensor({0, 1}), Tensor({0, 1})};
    CHECK_THROWS_AS(solve_theta(e, m, ctx), DegenerateEnsembleError);
  }

  SECTION("compatibility residual vanishes on random updown ensembles") {
    std::mt19937_64 rng(9);
    for (int rep = 0; rep < 20; ++rep) {
      UpDownModel m = random_updown_model(rng, rep % 2 ? Act::relu : Act::tanh);
      Ensemble<Tensor> e = random_ensemble(rng, 1 + rng() % 5, m.state_dim());
      auto th = solve_theta(e, m, ctx);
      CHECK(compatibility_residual(e, th, m) < 1e-10);
    }
  }
}

TEST_CASE("auto_solve_theta agrees with the closed form") {
  TensorCtx ctx;
  std::mt19937_64 rng(13);

  SECTION("zero momenta") {
    UpDownModel m;
    m.alpha = 2;
    Ensemble<Tensor> e{random_tensor(rng, {2, 3}), Tensor::zeros({2, 3})};
    auto th = auto_solve_theta(e, m);
    th.for_each([&](const Tensor& t) { CHECK(max_abs(t) < 1e-14); });
  }

  SECTION("linear model, including a non-identity penalty") {
    for (int rep = 0; rep < 10; ++rep) {
      LinearModel m;
      m.d = 1 + rng() % 3;
      m.act = rep % 2 ? Act::relu : Act::tanh;
      if (rep < 5) {
        m.penalty = LinearPenalty::scaled_identity(m.d, 1.0 + rep, 2.0);
      } else {
        Tensor ba = random_tensor(rng, {m.d, m.d});
        Tensor ma = matmul(ba, transpose(ba));
        Tensor bb = random_tensor(rng, {m.d, m.d});
        Tensor mb = matmul(bb, transpose(bb));
        for (std::size_t i = 0; i < m.d; ++i) {
          ma(i, i) += static_cast<double>(m.d);
          mb(i, i) += 1.0;
        }
        m.penalty = LinearPenalty::general(ma, mb);
      }
      Ensemble<Tensor> e = random_ensemble(rng, 1 + rng() % 5, m.d);
      auto want = solve_theta(e, m, ctx);
      auto got = auto_solve_theta(e, m);
      CHECK(max_abs_diff(got.a, want.a) < 1e-12);
      CHECK(max_abs_diff(got.b, want.b) < 1e-12);
    }
  }

  SECTION("updown model") {
    for (int rep = 0; rep < 10; ++rep) {
      UpDownModel m = random_updown_model(rng, rep % 2 ? Act::relu : Act::tanh);
      Ensemble<Tensor> e = random_ensemble(rng, 1 + rng() % 5, m.state_dim());
      auto want = solve_theta(e, m, ctx);
      auto got = auto_solve_theta(e, m);
      CHECK(max_abs_diff(got.t1, want.t1) < 1e-12);
      CHECK(max_abs_diff(got.b1, want.b1) < 1e-12);
      CHECK(max_abs_diff(got.t2, want.t2) < 1e-12);
      CHECK(max_abs_diff(got.b2, want.b2) < 1e-12);
      CHECK(max_abs_diff(got.t3, want.t3) < 1e-12);
    }
  }
}

TEST_CASE("hamiltonian value") {
  TensorCtx ctx;

  SECTION("zero momenta, zero theta") {
    LinearModel m;
    m.d = 2;
    m.penalty = LinearPenalty::scaled_identity(2);
    Ensemble<Tensor> e{Tensor::full({3, 2}, 0.4), Tensor::zeros({3, 2})};
    LinearFieldTheta<Tensor> th{Tensor::zeros({2, 2}), Tensor::zeros({2})};
    CHECK(hamiltonian(e, th, m, ctx).data[0] == 0.0);
  }

  SECTION("kinetic identity at the compatible theta") {
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 10; ++rep) {
      LinearModel lm;
      lm.d = 1 + rng() % 3;
      lm.act = rep % 2 ? Act::relu : Act::tanh;
      lm.penalty = LinearPenalty::scaled_identity(lm.d, 1.5, 0.5);
      Ensemble<Tensor> e = random_ensemble(rng, 1 + rng() % 4, lm.d);
      auto th = solve_theta(e, lm, ctx);
      const double h = hamiltonian(e, th, lm, ctx).data[0];
      const double r = penalty_value(th, lm, ctx).data[0];
      CHECK(std::abs(h - r) < 1e-12 * std::max(1.0, std::abs(r)));

      UpDownModel um = random_updown_model(rng, lm.act);
      Ensemble<Tensor> eu = random_ensemble(rng, 1 + rng() % 4, um.state_dim());
      auto thu = solve_theta(eu, um, ctx);
      const double hu = hamiltonian(eu, thu, um, ctx).data[0];
      const double ru = penalty_value(thu, um, ctx).data[0];
      CHECK(std::abs(hu - ru) < 1e-12 * std::max(1.0, std::abs(ru)));
    }
  }

  SECTION("termwise oracle") {
    std::mt19937_64 rng(19);
    UpDownModel m;
    m.d = 2;
    m.alpha = 3;
    m.act = Act::tanh;
    Ensemble<Tensor> e = random_ensemble(rng, 4, m.state_dim());
    UpDownTheta<Tensor> th{random_tensor(rng, {2, 6}), random_tensor(rng, {2}),
                           random_tensor(rng, {6, 2}), random_tensor(rng, {6}),
                           random_tensor(rng, {6, 6})};
    // particle-by-particle sum, all scalar loops
    double acc = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      Tensor qx = slice_cols(e.q, 0, 2), qv = slice_cols(e.q, 2, 8);
      Tensor xr({1, 2}), vr({1, 6});
      for (int c = 0; c < 2; ++c) xr(0, c) = qx(j, c);
      for (int c = 0; c < 6; ++c) vr(0, c) = qv(j, c);
      auto f = updown_field_oracle(xr, vr, th, m.act);
      for (int c = 0; c < 2; ++c) acc += e.p(j, c) * f.xdot(0, c);
      for (int c = 0; c < 6; ++c) acc += e.p(j, 2 + c) * f.vdot(0, c);
    }
    double r = 0.0;
    r += 0.5 * m.weights.t1 * frobenius_norm_sq(th.t1);
    r += 0.5 * m.weights.b1 * frobenius_norm_sq(th.b1);
    r += 0.5 * m.weights.t2 * frobenius_norm_sq(th.t2);
    r += 0.5 * m.weights.b2 * frobenius_norm_sq(th.b2);
    r += 0.5 * m.weights.t3 * frobenius_norm_sq(th.t3);
    CHECK(std::abs(hamiltonian(e, th, m, ctx).data[0] - (acc - r)) < 1e-13);
  }
}

TEST_CASE("shooting rhs") {
  SECTION("zero momenta fix the flow") {
    UpDownModel m;
    m.d = 1;
    m.alpha = 2;
    Bundle<Tensor> y0;
    y0.slots = {Tensor::matrix({{0.5}}), Tensor::matrix({{0.2, -0.1}}),
                Tensor::full({2, 3}, 0.8), Tensor::zeros({2, 3})};
    StageRecord<Tensor> rec;
    auto d = shooting_rhs(y0, m, rec);
    for (const auto& s : d.slots) CHECK(max_abs(s) == 0.0);
  }

  SECTION("hand-derived 1d linear instance") {
    LinearModel m;
    m.d = 1;
    m.penalty = LinearPenalty::scaled_identity(1);
    Bundle<Tensor> y0;
    y0.slots = {Tensor::matrix({{1.0}}), Tensor::matrix({{1.0}}), Tensor::matrix({{1.0}})};
    StageRecord<Tensor> rec;
    auto d = shooting_rhs(y0, m, rec);
    // A = p sigma(q) = 1, b = p = 1; qdot = A sigma(q) + b = 2; pdot = -sigma'(q) A p = -1
    CHECK(rec.theta[0].data[0] == 1.0);
    CHECK(rec.theta[1].data[0] == 1.0);
    CHECK(d.slots[0].data[0] == 2.0);
    CHECK(d.slots[1].data[0] == 2.0);
    CHECK(d.slots[2].data[0] == -1.0);
    CHECK(rec.hamiltonian.data[0] == 1.0);  // equals R = (1+1)/2
  }

  SECTION("momenta derivative matches finite differences of H") {
    std::mt19937_64 rng(29);
    UpDownModel m;
    m.d = 2;
    m.alpha = 2;
    m.act = Act::tanh;
    const std::size_t K = 3, S = m.state_dim();
    Ensemble<Tensor> e = random_ensemble(rng, K, S);

    auto ham_at = [&](const Tensor& q) {
      TensorCtx ctx;
      Ensemble<Tensor> eq{q, e.p};
      auto th = solve_theta(eq, m, ctx);
      return hamiltonian(eq, th, m, ctx).data[0];
    };

    Bundle<Tensor> y0;
    y0.slots = {Tensor({0, m.d}), Tensor({0, m.hidden_dim()}), e.q, e.p};
    StageRecord<Tensor> rec;
    auto d = shooting_rhs(y0, m, rec);

    Tensor fd = testutil::fd_gradient(ham_at, e.q, 1e-5);
    for (std::size_t i = 0; i < fd.numel(); ++i)
      CHECK(std::abs(d.slots[3].data[i] + fd.data[i]) < 1e-6);
  }
}

TEST_CASE("hamiltonian conservation along rollouts") {
  std::mt19937_64 rng(31);

  SECTION("smooth activation, order-4 drift") {
    for (int rep = 0; rep < 3; ++rep) {
      UpDownModel m = random_updown_model(rng, Act::tanh);
      Ensemble<Tensor> e = random_ensemble(rng, 1 + rng() % 5, m.state_dim(), 0.4);
      auto drift = rollout_drift(e, m, 0.01, 1.0);
      CHECK(drift.rel_drift < 1e-6);
      CHECK(drift.max_residual < 1e-10);

      LinearModel lm;
      lm.d = 1 + rng() % 3;
      lm.act = Act::tanh;
      lm.penalty = LinearPenalty::scaled_identity(lm.d);
      Ensemble<Tensor> el = random_ensemble(rng, 1 + rng() % 5, lm.d, 0.4);
      auto dl = rollout_drift(el, lm, 0.01, 1.0);
      CHECK(dl.rel_drift < 1e-6);
      CHECK(dl.max_residual < 1e-10);
    }
  }

  SECTION("relu instance confined to the positive orthant") {
    // positions and small momenta chosen so sigma stays on its linear branch
    UpDownModel m;
    m.d = 1;
    m.alpha = 2;
    m.act = Act::relu;
    Ensemble<Tensor> e{random_tensor(rng, {3, 3}, 1.0, 1.5), random_tensor(rng, {3, 3}, -0.05, 0.05)};
    auto drift = rollout_drift(e, m, 0.01, 1.0);
    CHECK(drift.rel_drift < 1e-6);
    CHECK(drift.max_residual < 1e-10);
  }
}

TEST_CASE("data initialized on a particle tracks it bitwise") {
  std::mt19937_64 rng(37);
  UpDownModel m;
  m.d = 2;
  m.alpha = 2;
  m.act = Act::tanh;
  const std::size_t S = m.state_dim();
  Ensemble<Tensor> e = random_ensemble(rng, 3, S, 0.4);

  // data row = particle 1's position split into (x, v)
  Tensor x0({1, m.d}), v0({1, m.hidden_dim()});
  for (std::size_t c = 0; c < m.d; ++c) x0(0, c) = e.q(1, c);
  for (std::size_t c = 0; c < m.hidden_dim(); ++c) v0(0, c) = e.q(1, m.d + c);

  Bundle<Tensor> y0;
  y0.slots = {x0, v0, e.q, e.p};
  auto roll = integrate<Tensor>(make_shooting_rhs<Tensor>(m), y0, {Scheme::rk4, 0.1, 1.0});
  for (const auto& state : roll.states) {
    const Tensor& xx = state.slots[0];
    const Tensor& vv = state.slots[1];
    const Tensor& qq = state.slots[2];
    for (std::size_t c = 0; c < m.d; ++c) CHECK(xx(0, c) == qq(1, c));
    for (std::size_t c = 0; c < m.hidden_dim(); ++c) CHECK(vv(0, c) == qq(1, m.d + c));
  }
}

TEST_CASE("taped and plain shooting rollouts agree bitwise") {
  std::mt19937_64 rng(41);
  UpDownModel m;
  m.d = 1;
  m.alpha = 2;
  m.act = Act::tanh;
  Ensemble<Tensor> e = random_ensemble(rng, 2, m.state_dim(), 0.4);
  Tensor x0 = random_tensor(rng, {2, 1});
  Tensor v0 = random_tensor(rng, {2, 2});

  Bundle<Tensor> yp;
  yp.slots = {x0, v0, e.q, e.p};
  auto plain = integrate<Tensor>(make_shooting_rhs<Tensor>(m), yp, {Scheme::rk4, 0.2, 1.0});

  Tape tape;
  Bundle<Var> yv;
  for (const Tensor& s : yp.slots) yv.slots.push_back(tape.leaf(s));
  auto taped = integrate<Var>(make_shooting_rhs<Var>(m), yv, {Scheme::rk4, 0.2, 1.0});

  for (std::size_t i = 0; i < yp.slots.size(); ++i)
    CHECK(taped.final_state.slots[i].value().data == plain.final_state.slots[i].data);
}
