#include <cmath>

#include "doctest.h"
#include "seg2seg/autodiff.hpp"
#include "seg2seg/gradcheck.hpp"
#include "test_util.hpp"

using namespace seg2seg;
using namespace seg2seg::ad;
using testutil::project;
using testutil::random_tensor;

namespace {

// Finite-difference check of a unary op applied to a parameter "x".
GradCheckReport check_unary(const std::function<Var(Var)>& op, Tensor x, double tol = 1e-7) {
  ParamMap p{{"x", std::move(x)}};
  return finite_diff_check([&](Graph& g, const ParamMap& ps) { return project(op(g.parameter("x", ps.at("x")))); },
                           p, 1e-6, tol);
}

GradCheckReport check_binary(const std::function<Var(Var, Var)>& op, Tensor a, Tensor b, double tol = 1e-7) {
  ParamMap p{{"a", std::move(a)}, {"b", std::move(b)}};
  return finite_diff_check(
      [&](Graph& g, const ParamMap& ps) {
        return project(op(g.parameter("a", ps.at("a")), g.parameter("b", ps.at("b"))));
      },
      p, 1e-6, tol);
}

}  // namespace

TEST_CASE("matmul forward matches a naive triple loop") {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  Graph g;
  const Tensor& c = matmul(g.constant(a), g.constant(b)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
      CHECK(c.at(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("elementwise and linear gradients match finite differences") {
  std::mt19937_64 rng(2);
  CHECK(check_binary([](Var a, Var b) { return matmul(a, b); }, random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)).ok());
  CHECK(check_binary([](Var a, Var b) { return add(a, b); }, random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)).ok());
  CHECK(check_binary([](Var a, Var b) { return sub(a, b); }, random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)).ok());
  CHECK(check_binary([](Var a, Var b) { return mul(a, b); }, random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)).ok());
  CHECK(check_binary([](Var a, Var b) { return add_bias(a, b); }, random_tensor({3, 2}, rng), random_tensor({2}, rng)).ok());
  CHECK(check_unary([](Var x) { return scale(x, -2.5); }, random_tensor({4}, rng)).ok());
  CHECK(check_unary([](Var x) { return add_scalar(x, 3.0); }, random_tensor({4}, rng)).ok());
}

TEST_CASE("nonlinearity gradients match finite differences") {
  std::mt19937_64 rng(3);
  CHECK(check_unary([](Var x) { return sigmoid(x); }, random_tensor({2, 3}, rng, -3, 3)).ok());
  CHECK(check_unary([](Var x) { return gelu(x); }, random_tensor({2, 3}, rng, -3, 3)).ok());
  CHECK(check_unary([](Var x) { return log(x); }, random_tensor({5}, rng, 0.5, 2.0)).ok());
  CHECK(check_unary([](Var x) { return softmax(x); }, random_tensor({3, 4}, rng, -2, 2)).ok());
  const std::vector<std::uint8_t> mask{1, 0, 1, 1, 1, 1, 0, 0, 1};
  CHECK(check_unary([&](Var x) { return masked_softmax(x, mask); }, random_tensor({3, 3}, rng)).ok());
  CHECK(check_unary([](Var x) { return row_normalize(x, 1e-12); }, random_tensor({3, 4}, rng, 0.1, 1.0)).ok());
}

TEST_CASE("layer norm gradient covers input, gain and bias") {
  std::mt19937_64 rng(4);
  ParamMap p{{"x", random_tensor({3, 5}, rng)}, {"g", random_tensor({5}, rng)}, {"b", random_tensor({5}, rng)}};
  auto rep = finite_diff_check(
      [](Graph& g, const ParamMap& ps) {
        return project(layer_norm(g.parameter("x", ps.at("x")), g.parameter("g", ps.at("g")),
                                  g.parameter("b", ps.at("b"))));
      },
      p, 1e-6, 1e-6);
  CHECK(rep.ok());
  CHECK(rep.entries.size() == 3);
}

TEST_CASE("reductions and structural ops have exact adjoints") {
  std::mt19937_64 rng(5);
  CHECK(check_unary([](Var x) { return sum(x); }, random_tensor({2, 3}, rng)).ok());
  CHECK(check_unary([](Var x) { return mean(x); }, random_tensor({2, 3}, rng)).ok());
  CHECK(check_unary([](Var x) { return sum_axis(x, 0); }, random_tensor({2, 3}, rng)).ok());
  CHECK(check_unary([](Var x) { return sum_axis(x, 1); }, random_tensor({2, 3}, rng)).ok());
  CHECK(check_unary([](Var x) { return cumsum(x, 0); }, random_tensor({3, 2}, rng)).ok());
  CHECK(check_unary([](Var x) { return cumsum(x, 1); }, random_tensor({3, 2}, rng)).ok());
  CHECK(check_unary([](Var x) { return transpose(x); }, random_tensor({2, 3}, rng)).ok());
  CHECK(check_unary([](Var x) { return reshape(x, {3, 2}); }, random_tensor({2, 3}, rng)).ok());
  CHECK(check_unary([](Var x) { return slice(x, 1, 1, 3); }, random_tensor({2, 4}, rng)).ok());
  CHECK(check_unary([](Var x) { return concat({x, scale(x, 2.0)}, 0); }, random_tensor({2, 2}, rng)).ok());
  CHECK(check_unary([](Var x) { return concat({x, x}, 1); }, random_tensor({2, 2}, rng)).ok());
  // l2_norm of a scalar is |x|; away from zero it has a clean derivative.
  CHECK(check_unary([](Var x) { return l2_norm(x); }, Tensor::scalar(0.7)).ok());
}

TEST_CASE("max pool keeps the final partial window and picks the lowest index on ties") {
  Graph g;
  Var x = g.constant(Tensor::vector({0.1, 0.9, 0.3, 0.7, 0.7, 0.2, 0.05}));
  const Tensor& y = max_pool(x, 3).value();
  REQUIRE(y.size() == 3);
  CHECK(y[0] == 0.9);
  CHECK(y[1] == 0.7);
  CHECK(y[2] == 0.05);

  const Tensor tied = Tensor::vector({0.5, 0.5, 0.1});
  Graph g2;
  Var p = g2.parameter("x", tied);
  const Gradients gr = g2.backward(sum(max_pool(p, 2)));
  CHECK(gr.at("x")[0] == 1.0);
  CHECK(gr.at("x")[1] == 0.0);
  CHECK(gr.at("x")[2] == 1.0);

  std::mt19937_64 rng(6);
  CHECK(check_unary([](Var v) { return max_pool(v, 2); }, Tensor::vector({0.1, 0.8, 0.35, 0.2, 0.9})).ok());
}

TEST_CASE("minimum and maximum route tie gradients to the first argument") {
  const Tensor t = Tensor::vector({1.0, 2.0});
  Graph g;
  Var a = g.parameter("a", t), b = g.parameter("b", t);
  const Gradients gmin = g.backward(sum(minimum(a, b)));
  CHECK(gmin.at("a")[0] == 1.0);
  CHECK(gmin.at("b")[0] == 0.0);
  const Gradients gmax = g.backward(sum(maximum(a, b)));
  CHECK(gmax.at("a")[1] == 1.0);
  CHECK(gmax.at("b")[1] == 0.0);
}

TEST_CASE("embedding accumulates gradients for repeated ids") {
  const Tensor table = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  Graph g;
  Var t = g.parameter("e", table);
  const std::vector<int> ids{2, 0, 2};
  Var out = embedding(t, ids);
  CHECK(out.value().at(0, 1) == 6.0);
  const Gradients gr = g.backward(sum(out));
  CHECK(gr.at("e").at(2, 0) == 2.0);
  CHECK(gr.at("e").at(1, 0) == 0.0);
  const std::vector<int> bad{3};
  CHECK_THROWS_AS(embedding(t, bad), std::out_of_range);
}

TEST_CASE("shape errors are rejected with both shapes in the message") {
  Graph g;
  Var a = g.constant(Tensor({2, 3})), b = g.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, g.constant(Tensor({3, 2}))), std::invalid_argument);
}

TEST_CASE("invalid numerical inputs are rejected") {
  Graph g;
  CHECK_THROWS_AS(log(g.constant(Tensor::vector({1.0, 0.0}))), std::invalid_argument);
  CHECK_THROWS_AS(sigmoid(g.constant(Tensor::vector({std::nan("")}))), NumericalError);
  const std::vector<std::uint8_t> none{0, 0};
  CHECK_THROWS_AS(masked_softmax(g.constant(Tensor::matrix({{1.0, 2.0}})), none), std::invalid_argument);
}

TEST_CASE("backward requires a scalar and is repeatable") {
  std::mt19937_64 rng(7);
  const Tensor w = random_tensor({3, 3}, rng);
  Graph g;
  Var p = g.parameter("w", w);
  Var y = sigmoid(matmul(p, p));
  CHECK_THROWS_AS(g.backward(y), std::invalid_argument);
  Var loss = sum(y);
  const Gradients g1 = g.backward(loss);
  const Gradients g2 = g.backward(loss);
  CHECK(g1.at("w") == g2.at("w"));
}

TEST_CASE("parameters reused by name share one leaf; untouched ones get zero gradients") {
  const Tensor w = Tensor::vector({2.0});
  const Tensor unused = Tensor::vector({1.0, 1.0});
  Graph g;
  Var a = g.parameter("w", w);
  Var b = g.parameter("w", w);
  CHECK(a.id() == b.id());
  g.parameter("u", unused);
  const Gradients gr = g.backward(sum(mul(a, b)));
  CHECK(gr.at("w")[0] == doctest::Approx(4.0));
  CHECK(gr.at("u") == Tensor({2}, 0.0));
}

TEST_CASE("inference graphs record no closures but still compute values") {
  Graph g(false);
  Var x = g.constant(Tensor::vector({0.0}));
  CHECK(sigmoid(x).value()[0] == 0.5);
  CHECK_FALSE(g.recording());
}

TEST_CASE("dropout is identity at rate zero and rescales survivors") {
  std::mt19937_64 rng(8);
  Graph g;
  const Tensor x = Tensor({1, 1000}, 1.0);
  CHECK(dropout(g.constant(x), 0.0, rng).value() == x);
  const Tensor& y = dropout(g.constant(x), 0.5, rng).value();
  for (double v : y.storage()) CHECK((v == 0.0 || v == doctest::Approx(2.0)));
}

TEST_CASE("gradcheck detects a wrong adjoint") {
  ParamMap p{{"x", Tensor::vector({0.3, -0.2})}};
  auto bad = [](Graph& g, const ParamMap& ps) {
    Var x = g.parameter("x", ps.at("x"));
    Tensor v = x.value();
    for (double& e : v.storage()) e = e * e;
    // Forward x^2 with a deliberately wrong adjoint (1 instead of 2x).
    Var y = g.record(std::move(v), {x.id()}, [](const Tensor& go, std::span<Tensor*> gi) {
      for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[i] += go[i];
    });
    return sum(y);
  };
  CHECK_FALSE(finite_diff_check(bad, p, 1e-6, 1e-6).ok());
  CHECK(relative_error(1.0, 1.0, 1e-6) == 0.0);
  CHECK(relative_error(0.0, 1e-9, 1e-6) == doctest::Approx(1e-3));
}
