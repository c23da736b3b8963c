#include <catch2/catch_amalgamated.hpp>

#include "shooting/autodiff.hpp"
#include "test_util.hpp"

using namespace shooting;
using testutil::fd_gradient;
using testutil::random_tensor;

TEST_CASE("grad of quadratic form") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  Var y = dot(x, x);
  auto g = tape.gradients(y, {x});
  CHECK(g[0].value().data == std::vector<double>{2, 4});
}

TEST_CASE("chain rule through relu on the linear region") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({2.0}));
  Var y = sum_all(relu(scale(x, 3.0)));
  auto g = tape.gradients(y, {x});
  CHECK(g[0].value().data[0] == 3.0);
}

TEST_CASE("relu derivative convention at zero") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({-1, 0, 2}));
  auto g = tape.gradients(sum_all(relu(x)), {x});
  CHECK(g[0].value().data == std::vector<double>{0, 0, 1});
}

TEST_CASE("random matmul/activation composite matches finite differences") {
  std::mt19937_64 rng(11);
  // shift inputs away from relu kinks so differences are smooth
  Tensor m1v = random_tensor(rng, {6, 6});
  Tensor m2v = random_tensor(rng, {6, 6});
  auto f = [&](const Tensor& xv) {
    Tape t;
    Var x = t.leaf(xv);
    Var h = shooting::tanh(matmul(t.constant(m1v), x));
    Var h2 = relu(add(matmul(t.constant(m2v), h), t.constant(Tensor::full({6}, 0.3))));
    return dot(h2, h2).value().data[0];
  };
  Tensor x0 = random_tensor(rng, {6}, 0.2, 1.0);

  Tape t;
  Var x = t.leaf(x0);
  Var h = shooting::tanh(matmul(t.constant(m1v), x));
  Var h2 = relu(add(matmul(t.constant(m2v), h), t.constant(Tensor::full({6}, 0.3))));
  auto g = t.gradients(dot(h2, h2), {x});

  Tensor fd = fd_gradient(f, x0, 1e-5);
  for (std::size_t i = 0; i < 6; ++i) {
    const double denom = std::max(1.0, std::abs(fd.data[i]));
    CHECK(std::abs(g[0].value().data[i] - fd.data[i]) / denom < 1e-6);
  }
}

TEST_CASE("every differentiable op agrees with finite differences") {
  std::mt19937_64 rng(23);
  struct Case {
    const char* name;
    std::function<Var(Tape&, Var)> build;
    std::vector<std::size_t> shape;
    double lo, hi;
  };
  std::vector<Case> cases = {
      {"mul+add", [](Tape& t, Var x) { return sum_all(mul(add(x, x), x)); }, {3, 2}, -1, 1},
      {"sub/neg", [](Tape& t, Var x) { return sum_all(sub(neg(x), x)); }, {4}, -1, 1},
      {"scale_by",
       [](Tape& t, Var x) {
         Var s = sum_all(x);
         return sum_all(scale_by(x, s));
       },
       {3},
       0.1,
       1},
      {"matmul/transpose",
       [](Tape& t, Var x) { return sum_all(matmul(transpose(x), x)); },
       {3, 2},
       -1,
       1},
      {"tanh", [](Tape& t, Var x) { return sum_all(shooting::tanh(x)); }, {5}, -1, 1},
      {"sigmoid", [](Tape& t, Var x) { return sum_all(sigmoid(x)); }, {5}, -1, 1},
      {"relu-shifted", [](Tape& t, Var x) { return sum_all(relu(x)); }, {5}, 0.2, 1},
      {"rowvec/colsum",
       [](Tape& t, Var x) {
         Var v = colsum(x);
         return sum_all(add_rowvec(x, v));
       },
       {3, 2},
       -1,
       1},
      {"slice/pad/concat",
       [](Tape& t, Var x) {
         Var a = slice_cols(x, 0, 1);
         Var b = slice_cols(x, 1, 3);
         return sum_all(mul(concat_cols(b, a), x));
       },
       {2, 3},
       -1,
       1},
      {"bcast", [](Tape& t, Var x) { return sum_all(bcast(sum_all(x), {2, 2})); }, {3}, -1, 1},
      {"bce",
       [](Tape& t, Var x) {
         return bce_logits_sum(x, t.constant(Tensor::vector({1, 0, 1})));
       },
       {3},
       -1,
       1},
  };
  for (auto& c : cases) {
    INFO(c.name);
    Tensor x0 = random_tensor(rng, c.shape, c.lo, c.hi);
    Tape t;
    Var x = t.leaf(x0);
    auto g = t.gradients(c.build(t, x), {x});
    Tensor fd = fd_gradient(
        [&](const Tensor& xv) {
          Tape t2;
          return c.build(t2, t2.leaf(xv)).value().data[0];
        },
        x0, 1e-5);
    for (std::size_t i = 0; i < x0.numel(); ++i) {
      const double denom = std::max(1.0, std::abs(fd.data[i]));
      CHECK(std::abs(g[0].value().data[i] - fd.data[i]) / denom < 1e-5);
    }
  }
}

TEST_CASE("second-order: grad of directional grad of quadratic form") {
  // f(q) = q^T M q; d/dq (grad f . c) = (M + M^T) c, exactly
  Tensor mv = Tensor::matrix({{1, 2}, {3, 4}});
  Tensor cv = Tensor::vector({5, -1});

  Tape t;
  Var q = t.leaf(Tensor::vector({0.7, -0.3}));
  Var m = t.constant(mv);
  Var f = dot(q, matmul(m, q));
  Var g1 = t.gradients(f, {q})[0];
  Var s = dot(g1, t.constant(cv));
  Var g2 = t.gradients(s, {q})[0];

  Tensor want = matmul(add(mv, transpose(mv)), cv);
  CHECK(g2.value().data == want.data);
}

TEST_CASE("taping off equals taping on, bitwise") {
  std::mt19937_64 rng(3);
  Tensor a = random_tensor(rng, {4, 3});
  Tensor b = random_tensor(rng, {3, 2});
  Tensor v = random_tensor(rng, {2});

  Tensor plain = sum_all(relu(add_rowvec(matmul(a, b), v)));

  Tape t;
  Var taped = sum_all(relu(add_rowvec(matmul(t.leaf(a), t.leaf(b)), t.leaf(v))));
  CHECK(taped.value().data[0] == plain.data[0]);
}

TEST_CASE("shared subexpressions accumulate") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(3.0));
  Var y = mul(x, x);
  Var s = add(y, y);
  auto g = t.gradients(s, {x});
  CHECK(g[0].value().data[0] == 12.0);  // d(2x^2)/dx = 4x
}

TEST_CASE("unreachable input gets a zero gradient") {
  Tape t;
  Var x = t.leaf(Tensor::vector({1.0}));
  Var z = t.leaf(Tensor::vector({2.0, 3.0}));
  auto g = t.gradients(sum_all(mul(x, x)), {x, z});
  CHECK(g[1].value().data == std::vector<double>{0, 0});
}

TEST_CASE("provenance errors") {
  Tape t1, t2;
  Var x = t1.leaf(Tensor::vector({1.0}));
  Var y = t2.leaf(Tensor::vector({1.0}));
  CHECK_THROWS_AS(t1.gradients(sum_all(x), {y}), ProvenanceError);
  Var c = t1.constant(Tensor::vector({1.0}));
  CHECK_THROWS_AS(t1.gradients(sum_all(x), {c}), ProvenanceError);
  CHECK_THROWS_AS(add(x, y), ProvenanceError);
}
