#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "shooting/objective.hpp"
#include "test_util.hpp"

using namespace shooting;
using testutil::random_tensor;

namespace {

// trajectory with hand-placed node thetas, for quadrature tests
Trajectory<Tensor> synthetic_linear_traj(const std::vector<double>& times,
                                         const std::function<double(double)>& a_of_t,
                                         const std::function<double(double)>& b_of_t) {
  Rollout<Tensor> seg;
  seg.times = times;
  for (std::size_t k = 0; k < times.size(); ++k) {
    StageRecord<Tensor> rec;
    rec.step = k;
    rec.stage = 0;
    rec.t = times[k];
    rec.theta = {Tensor::matrix({{a_of_t(times[k])}}), Tensor::vector({b_of_t(times[k])})};
    seg.stages.push_back(rec);
  }
  Trajectory<Tensor> traj;
  traj.segments.push_back(seg);
  return traj;
}

ModeParams<Tensor> particle_params(std::mt19937_64& rng, const ModeSpec& spec, double pscale) {
  const std::size_t s = (spec.alpha + 1) * spec.d;
  ModeParams<Tensor> p;
  p.ensemble.q = random_tensor(rng, {spec.particles, s}, -1.5, 1.5);
  p.ensemble.p = random_tensor(rng, {spec.particles, s}, -pscale, pscale);
  p.lift.weight = random_tensor(rng, {spec.alpha * spec.d, spec.d}, -0.3, 0.3);
  p.lift.bias = random_tensor(rng, {spec.alpha * spec.d}, -0.3, 0.3);
  return p;
}

}  // namespace

TEST_CASE("regularizer integral basics") {
  LinearModel lm;
  lm.d = 1;
  lm.penalty = LinearPenalty::scaled_identity(1);
  TensorCtx ctx;

  SECTION("zero theta integrates to zero") {
    auto traj = synthetic_linear_traj({0, 0.5, 1.0}, [](double) { return 0.0; },
                                      [](double) { return 0.0; });
    CHECK(regularizer_integral(traj, lm, ctx).data[0] == 0.0);
  }

  SECTION("constant theta with squared norm 2 over unit time") {
    // ||A||_F^2 = 2 via A = [[sqrt(2)]]; R = 1, integral over [0,1] = 1
    auto traj = synthetic_linear_traj({0, 0.25, 0.5, 0.75, 1.0},
                                      [](double) { return std::sqrt(2.0); },
                                      [](double) { return 0.0; });
    CHECK(regularizer_integral(traj, lm, ctx).data[0] == Catch::Approx(1.0).margin(1e-15));
  }

  SECTION("trapezoid converges at second order on a smooth schedule") {
    auto integral_with_step = [&](double h) {
      std::vector<double> times;
      for (double t = 0; t < 1.0 + 1e-12; t += h) times.push_back(t);
      auto traj = synthetic_linear_traj(times, [](double t) { return std::sin(t); },
                                        [](double) { return 0.0; });
      return regularizer_integral(traj, lm, ctx).data[0];
    };
    const double exact = 0.25 * (1.0 - std::sin(2.0) / 2.0);  // int sin^2/2
    const double e1 = std::abs(integral_with_step(0.05) - exact);
    const double e2 = std::abs(integral_with_step(0.025) - exact);
    CHECK(e1 / e2 > 3.5);
    CHECK(e1 / e2 < 4.5);
  }
}

TEST_CASE("conserved rollouts tie the integral to the initial energy") {
  std::mt19937_64 rng(67);
  LinearModel lm;
  lm.d = 2;
  lm.act = Act::tanh;
  lm.penalty = LinearPenalty::scaled_identity(2);
  Ensemble<Tensor> e{random_tensor(rng, {4, 2}, -1.5, 1.5), random_tensor(rng, {4, 2}, -0.4, 0.4)};
  Bundle<Tensor> y0;
  y0.slots = {Tensor({0, 2}), e.q, e.p};
  Trajectory<Tensor> traj;
  traj.segments.push_back(
      integrate<Tensor>(make_shooting_rhs<Tensor>(lm), y0, {Scheme::rk4, 0.05, 1.0}));

  const double h0 = traj.segments[0].node_records().front()->hamiltonian.data[0];
  const double reg = regularizer_integral(traj, lm, TensorCtx{}).data[0];
  CHECK(std::abs(reg - 1.0 * h0) < 1e-6);

  SECTION("complexity integrand is flat and the metric collapses to t*log2|theta0|") {
    const double spread = complexity_integrand_spread(traj);
    CHECK(spread < 1e-5);
    double sq0 = 0.0;
    for (const Tensor& part : traj.segments[0].node_records().front()->theta)
      sq0 += frobenius_norm_sq(part);
    CHECK(std::abs(complexity_metric(traj) - 1.0 * std::log2(std::sqrt(sq0))) < 1e-6);
  }
}

TEST_CASE("complexity metric on constant schedules") {
  LinearModel lm;
  lm.d = 1;
  auto traj2 = synthetic_linear_traj({0, 0.5, 1.0}, [](double) { return 2.0; },
                                     [](double) { return 0.0; });
  CHECK(complexity_metric(traj2) == Catch::Approx(1.0));

  auto traj1 = synthetic_linear_traj({0, 0.5, 1.0}, [](double) { return 1.0; },
                                     [](double) { return 0.0; });
  CHECK(complexity_metric(traj1) == Catch::Approx(0.0).margin(1e-15));

  auto traj0 = synthetic_linear_traj({0, 0.5, 1.0}, [](double) { return 0.0; },
                                     [](double) { return 0.0; });
  CHECK_THROWS_AS(complexity_metric(traj0), UndefinedMetricError);
}

TEST_CASE("total objective") {
  std::mt19937_64 rng(71);
  IntegratorSpec integ{Scheme::rk4, 0.25, 1.0};

  SECTION("perfect fit with zero theta is exactly zero") {
    ModeSpec spec;
    spec.mode = Mode::dynamic_with_particles;
    spec.d = 1;
    spec.alpha = 2;
    spec.particles = 3;
    ModeParams<Tensor> p = particle_params(rng, spec, 0.0);  // zero momenta
    Batch batch{random_tensor(rng, {4, 1}), Tensor({4, 1})};
    batch.targets = batch.inputs;  // identity map hits them exactly
    ObjectiveSpec ospec;
    auto parts = total_objective(p, batch, spec, integ, ospec);
    CHECK(parts.total.data[0] == 0.0);
  }

  SECTION("single sample arithmetic") {
    ModeSpec spec;
    spec.mode = Mode::static_direct;
    spec.d = 1;
    spec.alpha = 1;
    ModeParams<Tensor> p;
    p.theta_blocks.push_back({Tensor::zeros({1, 1}), Tensor::zeros({1}), Tensor::zeros({1, 1}),
                              Tensor::zeros({1}), Tensor::zeros({1, 1})});
    p.lift.weight = Tensor::zeros({1, 1});
    p.lift.bias = Tensor::zeros({1});
    Batch batch{Tensor::matrix({{0.5}}), Tensor::matrix({{0.4}})};
    ObjectiveSpec ospec;
    ospec.gamma = 100.0;
    auto parts = total_objective(p, batch, spec, integ, ospec);
    CHECK(parts.total.data[0] == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(parts.reg_integral.data[0] == 0.0);
  }

  SECTION("matches a sum-of-parts oracle and lambda=0 drops the penalty") {
    ModeSpec spec;
    spec.mode = Mode::dynamic_with_particles;
    spec.d = 1;
    spec.alpha = 2;
    spec.particles = 3;
    ModeParams<Tensor> p = particle_params(rng, spec, 0.3);
    Batch batch{random_tensor(rng, {5, 1}), random_tensor(rng, {5, 1})};
    ObjectiveSpec ospec;
    ospec.gamma = 100.0;
    ospec.lambda_reg = 0.7;
    auto parts = total_objective(p, batch, spec, integ, ospec);
    const double recombined =
        0.7 * parts.reg_integral.data[0] + 100.0 * parts.data_loss.data[0];
    CHECK(std::abs(parts.total.data[0] - recombined) < 1e-12);

    ObjectiveSpec bare = ospec;
    bare.lambda_reg = 0.0;
    auto parts0 = total_objective(p, batch, spec, integ, bare);
    CHECK(parts0.total.data[0] == 100.0 * parts0.data_loss.data[0]);
  }

  SECTION("trajectory loss consumes every recorded step") {
    ModeSpec spec;
    spec.mode = Mode::static_direct;
    spec.d = 1;
    spec.alpha = 1;
    ModeParams<Tensor> p;
    p.theta_blocks.push_back({Tensor::zeros({1, 1}), Tensor::vector({1.0}), Tensor::zeros({1, 1}),
                              Tensor::zeros({1}), Tensor::zeros({1, 1})});
    p.lift.weight = Tensor::zeros({1, 1});
    p.lift.bias = Tensor::zeros({1});
    // xdot = 1 from x0 = 0: states at nodes 0.25k
    Batch batch{Tensor::matrix({{0.0}}), Tensor::matrix({{0.25, 0.5, 0.75, 1.0}})};
    ObjectiveSpec ospec;
    ospec.loss = LossKind::mse_trajectory;
    auto parts = total_objective(p, batch, spec, integ, ospec);
    CHECK(parts.data_loss.data[0] < 1e-28);
  }

  SECTION("classification loss and accuracy") {
    ModeSpec spec;
    spec.mode = Mode::static_direct;
    spec.d = 2;
    spec.alpha = 1;
    ModeParams<Tensor> p;
    p.theta_blocks.push_back({Tensor::zeros({2, 2}), Tensor::zeros({2}), Tensor::zeros({2, 2}),
                              Tensor::zeros({2}), Tensor::zeros({2, 2})});
    p.lift.weight = Tensor::zeros({2, 2});
    p.lift.bias = Tensor::zeros({2});
    p.has_readout = true;
    p.readout.weight = Tensor::vector({1.0, 0.0});
    p.readout.bias = Tensor::scalar(0.0);
    Batch batch{Tensor::matrix({{2.0, 0.0}, {-2.0, 0.0}}), Tensor::vector({1.0, 0.0})};
    ObjectiveSpec ospec;
    ospec.loss = LossKind::binary_cross_entropy;
    ospec.with_readout = true;
    ospec.gamma = 1.0;
    auto parts = total_objective(p, batch, spec, integ, ospec);
    // both samples sit on the correct side with logit magnitude 2
    CHECK(parts.data_loss.data[0] == Catch::Approx(std::log1p(std::exp(-2.0))));
    CHECK(classification_accuracy(batch.inputs, p.readout, batch.targets) == 1.0);
  }
}
