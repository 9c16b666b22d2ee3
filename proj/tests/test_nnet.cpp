#include <doctest.h>

#include <cmath>

#include "xfer/error.hpp"
#include "xfer/nnet.hpp"

using namespace xfer;
using namespace xfer::nnet;

namespace {

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

DenseNet affine(double w, double b) {
  Layer l{Matrix::from_rows({{w}}), {b}, Activation::identity};
  return DenseNet({l});
}

double weighted_output(const DenseNet& net, const Matrix& x, const Matrix& d_out) {
  const Matrix y = predict(net, x);
  double s = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * d_out.data[i];
  return s;
}

}  // namespace

TEST_CASE("forward evaluates identity and affine layers") {
  Layer id{Matrix::from_rows({{1, 0}, {0, 1}}), {0, 0}, Activation::identity};
  const Matrix y = predict(DenseNet({id}), Matrix::from_rows({{1, 2}}));
  CHECK(y.data == std::vector<double>{1, 2});

  CHECK(predict(affine(2, 3), Matrix::from_rows({{1}})).data == std::vector<double>{5});
}

TEST_CASE("forward of the seed-0 two-layer tanh net matches a hand-rolled evaluation") {
  Rng rng(0);
  const std::size_t dims[] = {2, 3, 1};
  const DenseNet net = DenseNet::glorot(dims, Activation::tanh, Activation::identity, rng);
  const Matrix y = predict(net, Matrix::from_rows({{0.5, -0.5}}));
  CHECK(y(0, 0) == doctest::Approx(-0.6932841284330987).epsilon(1e-12));
}

TEST_CASE("forward rejects inputs of the wrong width") {
  CHECK_THROWS_AS(predict(affine(1, 0), Matrix(1, 2)), InvalidInput);
}

TEST_CASE("forward is deterministic") {
  Rng rng(3);
  const std::size_t dims[] = {3, 8, 4, 2};
  const DenseNet net = DenseNet::glorot(dims, Activation::tanh, Activation::sigmoid, rng);
  Matrix x(5, 3);
  for (double& v : x.data) v = rng.uniform(-1, 1);
  CHECK(predict(net, x).data == predict(net, x).data);
}

TEST_CASE("backward of an affine layer") {
  const DenseNet net = affine(2, 3);
  const Matrix x = Matrix::from_rows({{1.5}});
  const auto r = backward(net, forward(net, x), Matrix::from_rows({{1}}));
  CHECK(r.grads.layers[0].weight(0, 0) == 1.5);
  CHECK(r.grads.layers[0].bias[0] == 1.0);
  CHECK(r.d_input(0, 0) == 2.0);

  const auto z = backward(net, forward(net, x), Matrix::from_rows({{0}}));
  CHECK(z.grads.norm() == 0.0);
  CHECK(z.d_input(0, 0) == 0.0);
}

TEST_CASE("backward rejects a mismatched d_out or trace") {
  const DenseNet net = affine(2, 3);
  const Trace trace = forward(net, Matrix::from_rows({{1}}));
  CHECK_THROWS_AS(backward(net, trace, Matrix(2, 1)), InvalidInput);
  Rng rng(1);
  const std::size_t dims[] = {1, 4, 1};
  const DenseNet other = DenseNet::glorot(dims, Activation::tanh, Activation::identity, rng);
  CHECK_THROWS_AS(backward(other, trace, Matrix(1, 1)), InvalidInput);
}

TEST_CASE("backward agrees with central finite differences on random small nets") {
  const Activation acts[] = {Activation::tanh, Activation::sigmoid, Activation::identity};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t in = 1 + rng.uniform_int(3);
    const std::size_t h = 2 + rng.uniform_int(5);
    const std::size_t out = 1 + rng.uniform_int(2);
    const std::vector<std::size_t> dims = seed % 2 ? std::vector<std::size_t>{in, h, out}
                                                   : std::vector<std::size_t>{in, h, h, out};
    const DenseNet net = DenseNet::glorot(dims, acts[seed % 3], acts[(seed + 1) % 3], rng);
    REQUIRE(net.parameter_count() <= 100);
    Matrix x(4, in);
    for (double& v : x.data) v = rng.uniform(-1, 1);
    Matrix d_out(4, out);
    for (double& v : d_out.data) v = rng.uniform(-1, 1);

    const auto analytic = backward(net, forward(net, x), d_out).grads.flatten();
    const auto numeric =
        finite_diff_grad([&](const DenseNet& n) { return weighted_output(n, x, d_out); }, net, 1e-5).flatten();
    CHECK(max_relative_error(analytic, numeric) < 1e-5);
  }
}

TEST_CASE("backward input gradient agrees with finite differences") {
  Rng rng(11);
  const std::size_t dims[] = {3, 5, 2};
  const DenseNet net = DenseNet::glorot(dims, Activation::tanh, Activation::identity, rng);
  Matrix x(2, 3);
  for (double& v : x.data) v = rng.uniform(-1, 1);
  Matrix d_out(2, 2);
  for (double& v : d_out.data) v = rng.uniform(-1, 1);
  const auto r = backward(net, forward(net, x), d_out);
  const double eps = 1e-5;
  std::vector<double> numeric;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    Matrix xp = x, xm = x;
    xp.data[i] += eps;
    xm.data[i] -= eps;
    numeric.push_back((weighted_output(net, xp, d_out) - weighted_output(net, xm, d_out)) / (2 * eps));
  }
  CHECK(max_relative_error(r.d_input.data, numeric) < 1e-5);
}

TEST_CASE("grad_reverse negates and scales") {
  CHECK(grad_reverse(Matrix::from_rows({{2, -1}}), 1.0).data == std::vector<double>{-2, 1});
  CHECK(grad_reverse(Matrix::from_rows({{4}}), 0.5).data == std::vector<double>{-2});
  for (double v : grad_reverse(Matrix::from_rows({{3, -7, 0.25}}), 0.0).data) CHECK(v == 0.0);
  CHECK_THROWS_AS(grad_reverse(Matrix(1, 1), -1.0), InvalidInput);
}

TEST_CASE("grad_reverse applied twice with lambda 1 is the identity, bit-exactly") {
  Rng rng(5);
  Matrix g(7, 3);
  for (double& v : g.data) v = rng.normal(0, 100);
  CHECK(grad_reverse(grad_reverse(g, 1.0), 1.0).data == g.data);
}

TEST_CASE("sgd and adam updates") {
  SUBCASE("sgd") {
    OptimState st(Method::sgd, 0.1, 1);
    std::vector<double> p{1.0};
    const std::vector<double> g{2.0};
    st.apply(p, g);
    CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(st.step_count() == 1);
  }
  SUBCASE("zero gradient is a fixed point") {
    for (Method m : {Method::sgd, Method::adam}) {
      OptimState st(m, 0.01, 2);
      std::vector<double> p{1.5, -2.0};
      const std::vector<double> g{0.0, 0.0};
      st.apply(p, g);
      CHECK(p == std::vector<double>{1.5, -2.0});
      CHECK(st.step_count() == 1);
    }
  }
  SUBCASE("adam first step is bias corrected") {
    OptimState st(Method::adam, 0.001, 1);
    std::vector<double> p{0.0};
    const std::vector<double> g{1.0};
    st.apply(p, g);
    // m_hat = v_hat = 1 after correction: p = -lr / (1 + eps).
    CHECK(p[0] == doctest::Approx(-0.001 / (1.0 + 1e-8)).epsilon(1e-14));
  }
  SUBCASE("non-finite gradient diverges") {
    OptimState st(Method::adam, 0.001, 1);
    std::vector<double> p{0.0};
    const std::vector<double> g{std::nan("")};
    CHECK_THROWS_AS(st.apply(p, g), TrainingDiverged);
  }
  CHECK_THROWS_AS(OptimState(Method::sgd, 0.0, 1), InvalidInput);
}

TEST_CASE("optimizer_step updates a network in place") {
  DenseNet net = affine(1.0, 0.0);
  Gradients g = Gradients::zeros_like(net);
  g.layers[0].weight(0, 0) = 2.0;
  g.layers[0].bias[0] = -1.0;
  OptimState st(Method::sgd, 0.5, net.parameter_count());
  optimizer_step(net, g, st);
  CHECK(net.layers()[0].weight(0, 0) == 0.0);
  CHECK(net.layers()[0].bias[0] == 0.5);
}

TEST_CASE("finite_diff_grad on closed-form losses") {
  const DenseNet net = affine(3.0, 0.0);
  const auto sq = finite_diff_grad(
      [](const DenseNet& n) {
        const double p = n.layers()[0].weight(0, 0);
        return p * p;
      },
      net, 1e-4);
  CHECK(sq.layers[0].weight(0, 0) == doctest::Approx(6.0).epsilon(1e-8));
  CHECK(sq.layers[0].bias[0] == 0.0);

  const auto constant = finite_diff_grad([](const DenseNet&) { return 4.2; }, net, 1e-4);
  CHECK(constant.norm() == 0.0);
  CHECK_THROWS_AS(finite_diff_grad([](const DenseNet&) { return 0.0; }, net, 0.0), InvalidInput);
}

TEST_CASE("clamped sigmoid stays strictly inside (0, 1)") {
  for (double x : {-1000.0, -40.0, 0.0, 40.0, 1000.0}) {
    const double p = clamp_probability(sigmoid(x));
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
  CHECK(sigmoid(0.0) == 0.5);
}

TEST_CASE("json snapshots preserve every parameter") {
  Rng rng(9);
  const std::size_t dims[] = {4, 6, 1};
  const DenseNet net = DenseNet::glorot(dims, Activation::relu, Activation::sigmoid, rng);
  const auto j = to_json(net);
  CHECK(j.at("layers").size() == 2);
  CHECK(j.at("layers")[0].at("rows") == 4);
  CHECK(j.at("layers")[1].at("activation") == "sigmoid");
  CHECK(net_from_json(nlohmann::json::parse(j.dump())) == net);
}

TEST_CASE("mismatched layer chaining is rejected") {
  Layer a{Matrix(2, 3), {0, 0, 0}, Activation::tanh};
  Layer b{Matrix(2, 1), {0}, Activation::identity};
  CHECK_THROWS_AS(DenseNet({a, b}), InvalidInput);
}
