#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "xmodal/autodiff.hpp"
#include "xmodal/error.hpp"
#include "xmodal/layers.hpp"
#include "xmodal/optim.hpp"
#include "xmodal/tensor.hpp"

using namespace xmodal;
using namespace xmodal::nn;

namespace {

double grad_error(const std::function<Var(const Var&)>& f, const Tensor& x0) {
  Var x = parameter(x0, "x");
  const auto grads = backward(f(x));
  const Tensor analytic = grads.contains(x) ? grads.at(x) : Tensor(x0.rows(), x0.cols());
  const Tensor numeric = oracle::fd_gradient([&](const Tensor& v) { return f(constant(v))->value.item(); }, x0);
  return oracle::relative_error(analytic, numeric);
}

}  // namespace

TEST_CASE("tensor products and stacking") {
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  const Tensor b = Tensor::from_rows({{5, 6}, {7, 8}});
  CHECK(matmul(a, b) == Tensor::from_rows({{19, 22}, {43, 50}}));
  CHECK(matmul_tn(a, b) == matmul(a.transposed(), b));
  CHECK(matmul_nt(a, b) == matmul(a, b.transposed()));
  const std::array<Tensor, 2> parts{a, b};
  CHECK(hstack(parts).cols() == 4);
  CHECK(vstack(parts).rows() == 4);
  const std::array<std::size_t, 2> idx{1, 1};
  CHECK(gather_rows(a, idx) == Tensor::from_rows({{3, 4}, {3, 4}}));
  CHECK_THROWS_AS(matmul(a, Tensor(3, 1)), DimensionError);
  CHECK_THROWS_AS(Tensor(2, 2).item(), UsageError);
  Tensor bad(1, 1, std::nan(""));
  CHECK_THROWS_AS(bad.require_finite("x"), NumericError);
}

TEST_CASE("he init statistics and determinism") {
  const Tensor w = he_init(2, 50000, 3);
  double s2 = 0.0;
  for (double v : w.values()) s2 += v * v;
  const double std_est = std::sqrt(s2 / static_cast<double>(w.size()));
  CHECK(std::abs(std_est - 1.0) < 0.05);
  CHECK(he_init(4, 3, 9) == he_init(4, 3, 9));
  CHECK_FALSE(he_init(4, 3, 9) == he_init(4, 3, 10));
}

TEST_CASE("op gradients match finite differences") {
  std::mt19937_64 rng(5);
  const Tensor w = oracle::random_tensor(3, 4, rng);
  const Tensor bias = oracle::random_tensor(1, 4, rng);
  const Tensor r = oracle::random_tensor(2, 4, rng);
  for (int p = 0; p < 20; ++p) {
    const Tensor x0 = oracle::random_tensor(2, 3, rng);
    const auto f = [&](const Var& x) {
      Var h = add_row(matmul(x, constant(w)), constant(bias));
      Var mixed = sub(scale(relu(h), 1.5), square(h));
      const std::array<Var, 2> cols{mixed, x};
      Var cat = concat_cols(cols);
      return sum(add(cat, cat));
    };
    CHECK(grad_error(f, x0) < 1e-6);
    // Same graph differentiated through the weight side.
    const auto g = [&](const Var& wv) {
      return sum(matmul(relu(add_row(matmul(constant(x0), wv), constant(bias))), constant(r.transposed())));
    };
    CHECK(grad_error(g, w) < 1e-6);
  }
}

TEST_CASE("dense layer and mlp gradients") {
  std::mt19937_64 rng(8);
  for (int p = 0; p < 20; ++p) {
    Mlp net("net", 4, {{6, Activation::relu}, {3, Activation::linear}}, 0.0, 100 + p);
    for (const Var& param : net.parameters())
      for (double& v : param->value.values()) v += std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
    const Tensor x0 = oracle::random_tensor(5, 4, rng);
    CHECK(grad_error([&](const Var& x) { return sum(net.forward(x, {})); }, x0) < 1e-6);
  }
}

TEST_CASE("dropout: eval identity, train zero fraction") {
  std::mt19937_64 rng(1);
  const Tensor x(100, 100, 1.0);
  Var in = constant(x);
  CHECK(dropout(in, 0.5, rng, false)->value == x);
  const Tensor out = dropout(in, 0.3, rng, true)->value;
  double zeros = 0.0;
  for (double v : out.values()) {
    if (v == 0.0) zeros += 1.0;
    else CHECK(v == doctest::Approx(1.0 / 0.7));
  }
  const double n = static_cast<double>(x.size());
  const double sigma = std::sqrt(n * 0.3 * 0.7);
  CHECK(std::abs(zeros - 0.3 * n) < 3.0 * sigma);

  Mlp net("d", 3, {{4, Activation::relu, 0.5}, {2, Activation::linear}}, 0.0, 4);
  const Tensor xin = oracle::random_tensor(2, 3, rng);
  CHECK(net.forward(constant(xin), {})->value == net.infer(xin));
  CHECK_THROWS_AS(net.forward(constant(xin), ForwardContext{Mode::train, nullptr}), UsageError);
}

TEST_CASE("learning-rate schedule is monotone and ends at end_lr") {
  AdamConfig c;
  c.lr0 = 0.01;
  c.end_lr = 0.001;
  c.total_steps = 100;
  c.decay_power = 2.0;
  CHECK(c.lr(0) == doctest::Approx(0.01));
  for (std::size_t s = 1; s <= 100; ++s) CHECK(c.lr(s) <= c.lr(s - 1));
  CHECK(c.lr(100) == doctest::Approx(0.001));
  AdamConfig bad;
  bad.lr0 = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("adam first step moves each weight by lr against the gradient sign") {
  Var p = parameter(Tensor::from_rows({{1.0, -2.0}}), "p");
  Var loss = sum(square(p));
  const auto grads = backward(loss);
  AdamConfig c;
  c.lr0 = 0.1;
  c.total_steps = 10;
  Adam opt(c);
  const std::array<Var, 1> params{p};
  opt.step(params, grads, 0);
  CHECK(p->value(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p->value(0, 1) == doctest::Approx(-1.9).epsilon(1e-6));
  CHECK_THROWS_AS(opt.step(params, grads, 10), UsageError);
}

TEST_CASE("decoupled weight decay leaves gradients untouched") {
  Var p = parameter(Tensor::from_rows({{2.0}}), "p", 0.5);
  Var loss = scale(p, 0.0);
  const auto grads = backward(loss);
  CHECK(grads.at(p)(0, 0) == 0.0);
  AdamConfig c;
  c.lr0 = 0.1;
  c.total_steps = 1;
  Adam opt(c);
  const std::array<Var, 1> params{p};
  opt.step(params, grads, 0);
  // Zero gradient: only the decay term acts, W -= lr * wd * W.
  CHECK(p->value(0, 0) == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
}

TEST_CASE("frozen parameters stay bit-identical") {
  std::mt19937_64 rng(2);
  Mlp net("f", 3, {{4, Activation::relu}, {2, Activation::linear}}, 1e-3, 11);
  net.set_frozen(true);
  std::vector<Tensor> before;
  for (const Var& p : net.parameters()) before.push_back(p->value);
  AdamConfig c;
  c.total_steps = 20;
  Adam opt(c);
  const auto params = net.parameters();
  for (std::size_t s = 0; s < 20; ++s) {
    Var loss = sum(square(net.forward(constant(oracle::random_tensor(4, 3, rng)), {})));
    opt.step(params, backward(loss), s);
  }
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i]->value == before[i]);
}

TEST_CASE("mlp json round trip") {
  Mlp net("r", 3, {{4, Activation::relu, 0.25}, {2, Activation::linear}}, 1e-3, 5, 0.1);
  net.set_frozen(true);
  const Mlp back = Mlp::from_json(net.to_json());
  CHECK(back.to_json() == net.to_json());
  CHECK(back.frozen());
  const Tensor x = Tensor::from_rows({{0.1, 0.2, 0.3}});
  CHECK(back.infer(x) == net.infer(x));
}
