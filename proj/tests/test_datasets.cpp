#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "shooting/datasets.hpp"

using namespace shooting;

TEST_CASE("1d regression formulas") {
  CHECK(function_value(FunctionKind::quadratic_like, 0.0) == 3.0);
  CHECK(function_value(FunctionKind::quadratic_like, 1.0) == 2.5);
  CHECK(function_value(FunctionKind::cubic, -1.0) == -1.0);

  Rng rng(5);
  Batch b = gen_function_1d(FunctionKind::quadratic_like, 50, -1.5, 1.5, rng);
  for (std::size_t i = 0; i < 50; ++i) {
    const double x = b.inputs(i, 0);
    CHECK(x >= -1.5);
    CHECK(x <= 1.5);
    CHECK(b.targets(i, 0) == function_value(FunctionKind::quadratic_like, x));
  }
  Rng rng2(5);
  Batch b2 = gen_function_1d(FunctionKind::quadratic_like, 50, -1.5, 1.5, rng2);
  CHECK(b.inputs.data == b2.inputs.data);

  Rng rng3(6);
  CHECK_THROWS_AS(gen_function_1d(FunctionKind::cubic, 5, 1.0, 1.0, rng3), ConfigError);
}

TEST_CASE("spiral reference trajectory") {
  SpiralSpec spec;
  Tensor ref = spiral_reference(spec);
  REQUIRE(ref.shape == std::vector<std::size_t>{201, 2});
  CHECK(ref(0, 0) == 2.0);
  CHECK(ref(0, 1) == 0.0);

  // derivative at the start: A (x^3) = [-0.8, -16]
  Bundle<Tensor> y0;
  y0.slots.push_back(Tensor::matrix({{2.0, 0.0}}));
  StageRecord<Tensor> rec;
  auto d = spiral_rhs(spec)(0.0, y0, rec);
  CHECK(d.slots[0](0, 0) == Catch::Approx(-0.8));
  CHECK(d.slots[0](0, 1) == Catch::Approx(-16.0));

  // regeneration reproduces the trace
  Tensor again = spiral_reference(spec);
  CHECK(max_abs_diff(ref, again) < 1e-8);
}

TEST_CASE("spiral snippets and arc-length sampling") {
  SpiralSpec spec;
  Rng rng(17);
  const std::size_t n = 10000;
  SpiralData sd = gen_spiral(n, spec, rng);
  REQUIRE(sd.data.inputs.shape == std::vector<std::size_t>{n, 2});
  REQUIRE(sd.data.targets.shape == std::vector<std::size_t>{n, 10});

  // snippet targets are consecutive reference nodes from the input onward
  for (std::size_t i = 0; i < 5; ++i) {
    std::size_t k = 0;
    while (k < sd.reference.shape[0] &&
           (sd.reference(k, 0) != sd.data.inputs(i, 0) ||
            sd.reference(k, 1) != sd.data.inputs(i, 1)))
      ++k;
    REQUIRE(k + 5 < sd.reference.shape[0]);
    for (std::size_t j = 1; j <= 5; ++j) {
      CHECK(sd.data.targets(i, 2 * (j - 1)) == sd.reference(k + j, 0));
      CHECK(sd.data.targets(i, 2 * (j - 1) + 1) == sd.reference(k + j, 1));
    }
  }

  // chi-square of the snapped arc positions against the snapping-aware
  // expectation, 20 bins, 1% significance (chi2_0.99(19) = 36.19)
  const std::size_t nodes = sd.reference.shape[0];
  std::vector<double> cum(nodes, 0.0);
  for (std::size_t k = 1; k < nodes; ++k) {
    const double dx = sd.reference(k, 0) - sd.reference(k - 1, 0);
    const double dy = sd.reference(k, 1) - sd.reference(k - 1, 1);
    cum[k] = cum[k - 1] + std::hypot(dx, dy);
  }
  const std::size_t last_start = nodes - 1 - 5;
  const double usable = cum[last_start + 1];
  const int bins = 20;
  std::vector<double> expected(bins, 0.0), observed(bins, 0.0);
  for (std::size_t k = 0; k <= last_start; ++k) {
    int bin = std::min(bins - 1, static_cast<int>(cum[k] / usable * bins));
    expected[bin] += (cum[k + 1] - cum[k]) / usable * static_cast<double>(n);
  }
  for (double s : sd.arc_positions) {
    int bin = std::min(bins - 1, static_cast<int>(s / usable * bins));
    observed[bin] += 1.0;
  }
  double chi2 = 0.0;
  for (int b = 0; b < bins; ++b) chi2 += (observed[b] - expected[b]) * (observed[b] - expected[b]) / expected[b];
  CHECK(chi2 < 36.19);
}

TEST_CASE("concentric circles") {
  AnnulusSpec spec;
  Rng rng(23);
  Batch b = gen_concentric_circles(200, spec, rng);
  REQUIRE(b.inputs.shape == std::vector<std::size_t>{400, 2});
  for (std::size_t i = 0; i < 400; ++i) {
    const double r = std::hypot(b.inputs(i, 0), b.inputs(i, 1));
    if (i < 200) {
      CHECK(b.targets.data[i] == 0.0);
      CHECK(r <= 1.0 + 1e-12);
    } else {
      CHECK(b.targets.data[i] == 1.0);
      CHECK(r >= 1.5 - 1e-12);
      CHECK(r <= 2.5 + 1e-12);
    }
  }

  SECTION("empty dataset") {
    Rng r0(1);
    Batch e = gen_concentric_circles(0, spec, r0);
    CHECK(e.inputs.numel() == 0);
  }

  SECTION("outer-class mean radius sits at the interval midpoint") {
    Rng r1(29);
    Batch big = gen_concentric_circles(10000, spec, r1);
    double acc = 0.0;
    for (std::size_t i = 10000; i < 20000; ++i)
      acc += std::hypot(big.inputs(i, 0), big.inputs(i, 1));
    const double mean = acc / 10000.0;
    CHECK(mean == Catch::Approx(2.0).epsilon(0.01));
  }

  SECTION("overlapping intervals are rejected") {
    AnnulusSpec bad;
    bad.inner_hi = 1.8;
    Rng r2(1);
    CHECK_THROWS_AS(gen_concentric_circles(5, bad, r2), ConfigError);
  }
}
