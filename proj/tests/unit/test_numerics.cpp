#include <doctest.h>

#include <cmath>

#include "cpql/activation.hpp"
#include "cpql/errors.hpp"
#include "cpql/mlp.hpp"
#include "cpql/optim.hpp"
#include "cpql/rng.hpp"
#include "helpers.hpp"

using namespace cpql;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("mish reference values") {
  CHECK(mish(0.0) == 0.0);
  CHECK(mish(1.0) == doctest::Approx(0.8650983882673103).epsilon(1e-15));
  CHECK(std::abs(mish(-20.0)) < 1e-7);
  CHECK(mish(-20.0) < 0.0);
  CHECK(std::isfinite(mish(-800.0)));
  CHECK(mish(800.0) == doctest::Approx(800.0));
}

TEST_CASE("vectorized mish agrees with the scalar form") {
  Eigen::ArrayXXd x = Eigen::ArrayXd::LinSpaced(401, -40.0, 40.0);
  Eigen::ArrayXXd out(x.rows(), x.cols()), d(x.rows(), x.cols());
  mish_inplace(x, out, &d);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    CHECK(out(i) == doctest::Approx(mish(x(i))).epsilon(1e-13));
    CHECK(d(i) == doctest::Approx(mish_derivative(x(i))).epsilon(1e-12));
  }
}

TEST_CASE("mish derivative matches finite differences") {
  for (double x : {-6.0, -1.3, -0.2, 0.0, 0.4, 1.0, 3.7, 9.0}) {
    const double h = 1e-6;
    const double fd = (mish(x + h) - mish(x - h)) / (2 * h);
    CHECK(mish_derivative(x) == doctest::Approx(fd).epsilon(1e-8));
  }
}

TEST_CASE("rng streams are reproducible and splits are independent of parent draws") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  CHECK(a == b);
  Rng p(7), q(7);
  Rng pc = p.split();
  Rng qc = q.split();
  CHECK(pc.uniform() == qc.uniform());
  CHECK(p.uniform() == q.uniform());
  Rng r(7);
  Rng r1 = r.split();
  Rng r2 = r.split();
  CHECK(r1.normal() != r2.normal());
  Rng s(1);
  for (int i = 0; i < 1000; ++i) {
    const auto k = s.uniform_int(-2, 3);
    CHECK(k >= -2);
    CHECK(k <= 3);
  }
}

TEST_CASE("mlp parameter count matches the closed form") {
  const std::vector<int> w = {4, 8, 8, 2};
  const Eigen::Index plain = 4 * 8 + 8 + 8 * 8 + 8 + 8 * 2 + 2;
  CHECK(Mlp<double>(w, false).param_count() == plain);
  CHECK(Mlp<double>(w, true).param_count() == plain + 2 * 8 + 2 * 8);
  CHECK(Mlp<double>::param_count_for(w, true) == plain + 32);
  CHECK(Mlp<double>::three_layer(7, 256, 1, true).param_count() ==
        7 * 256 + 256 + 256 * 256 + 256 + 256 + 1 + 4 * 256);
}

TEST_CASE("zero network returns zeros") {
  Mlp<double> net({4, 8, 8, 2}, true);
  net.set_params(VectorXd::Zero(net.param_count()));
  Rng rng(3);
  const MatrixXd y = net.forward(testutil::random_matrix(rng, 4, 5));
  CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("parameter flatten round-trip is the identity") {
  Rng rng(5);
  Mlp<double> net({3, 6, 6, 2}, true);
  net.init_uniform(rng);
  const VectorXd p = net.params();
  Mlp<double> other({3, 6, 6, 2}, true);
  other.set_params(p);
  CHECK(other.params() == p);
  const MatrixXd x = testutil::random_matrix(rng, 3, 4);
  CHECK(other.forward(x) == net.forward(x));
  CHECK_THROWS_AS(other.set_params(VectorXd::Zero(3)), UsageError);
}

TEST_CASE("degenerate 1-1-1-1 net composes mish") {
  Mlp<double> net({1, 1, 1, 1}, false);
  // layout per layer: W, b
  VectorXd p(6);
  p << 1.0, 0.0, 1.0, 0.0, 1.0, 0.0;
  net.set_params(p);
  for (double x : {-2.0, -0.5, 0.3, 1.0, 4.0}) {
    MatrixXd in(1, 1);
    in << x;
    CHECK(net.forward(in)(0, 0) == doctest::Approx(mish(mish(x))).epsilon(1e-14));
  }
}

TEST_CASE("layernorm on a constant pre-activation normalizes to zero") {
  Mlp<double> net({2, 4, 1}, true);
  // hidden layer: W = 0, b = 3 gives constant pre-activation; LN scale 1, shift 0
  VectorXd p = VectorXd::Zero(net.param_count());
  p.segment(8, 4).setConstant(3.0);  // b
  p.segment(12, 4).setOnes();        // scale
  p.segment(20, 4).setOnes();        // output weights read mish(0) = 0
  net.set_params(p);
  MlpTape<double> tape;
  MatrixXd x(2, 1);
  x << 0.7, -1.2;
  const MatrixXd y = net.forward(x, tape);
  CHECK(tape.layers[0].normalized.cwiseAbs().maxCoeff() == 0.0);
  CHECK(y(0, 0) == 0.0);
}

TEST_CASE("mlp forward rejects a wrong input dimension") {
  Mlp<double> net({4, 8, 8, 2}, false);
  CHECK_THROWS_AS(net.forward(MatrixXd::Zero(3, 2)), UsageError);
  MlpTape<double> empty;
  CHECK_THROWS_AS(net.backward(empty, MatrixXd::Zero(2, 1), nullptr), UsageError);
}

TEST_CASE("mlp backward matches central finite differences") {
  for (bool ln : {false, true}) {
    CAPTURE(ln);
    Rng rng(11);
    Mlp<double> net({4, 8, 8, 2}, ln);
    net.init_uniform(rng);
    if (ln) net.params() += 0.3 * testutil::random_matrix(rng, net.param_count(), 1);
    const MatrixXd x = testutil::random_matrix(rng, 4, 6);
    const MatrixXd w = testutil::random_matrix(rng, 2, 6);
    auto loss = [&] { return (net.forward(x).array() * w.array()).sum(); };

    MlpTape<double> tape;
    net.forward(x, tape);
    VectorXd g = VectorXd::Zero(net.param_count());
    const MatrixXd gx = net.backward(tape, w, &g);
    const VectorXd fd = testutil::numeric_grad(net.params(), loss);
    CHECK(testutil::rel_err(g, fd) < 1e-6);

    MatrixXd xv = x;
    Eigen::Map<VectorXd> xflat(xv.data(), xv.size());
    VectorXd xcopy = xflat;
    auto loss_x = [&] {
      MatrixXd xm = Eigen::Map<MatrixXd>(xcopy.data(), 4, 6);
      return (net.forward(xm).array() * w.array()).sum();
    };
    const VectorXd fdx = testutil::numeric_grad(xcopy, loss_x);
    const VectorXd gxflat = Eigen::Map<const VectorXd>(gx.data(), gx.size());
    CHECK(testutil::rel_err(gxflat, fdx) < 1e-6);
  }
}

TEST_CASE("mlp backward is linear in the upstream gradient") {
  Rng rng(2);
  Mlp<double> net({4, 8, 8, 2}, true);
  net.init_uniform(rng);
  const MatrixXd x = testutil::random_matrix(rng, 4, 5);
  MlpTape<double> tape;
  net.forward(x, tape);
  const MatrixXd g1 = testutil::random_matrix(rng, 2, 5);
  const MatrixXd g2 = testutil::random_matrix(rng, 2, 5);
  VectorXd p1 = VectorXd::Zero(net.param_count()), p2 = p1, p12 = p1, pz = p1;
  const MatrixXd i1 = net.backward(tape, g1, &p1);
  const MatrixXd i2 = net.backward(tape, g2, &p2);
  const MatrixXd i12 = net.backward(tape, g1 + g2, &p12);
  CHECK((p12 - p1 - p2).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((i12 - i1 - i2).cwiseAbs().maxCoeff() < 1e-12);
  const MatrixXd iz = net.backward(tape, MatrixXd::Zero(2, 5), &pz);
  CHECK(pz.cwiseAbs().maxCoeff() == 0.0);
  CHECK(iz.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("init is uniform within fan-in bounds with zero biases") {
  Rng rng(9);
  Mlp<double> net({16, 32, 4}, true);
  net.init_uniform(rng);
  const VectorXd& p = net.params();
  const double bound = 1.0 / std::sqrt(16.0);
  CHECK(p.head(16 * 32).cwiseAbs().maxCoeff() <= bound);
  CHECK(p.segment(16 * 32, 32).cwiseAbs().maxCoeff() == 0.0);
  CHECK(p.segment(16 * 32 + 32, 32) == VectorXd::Ones(32));
}

TEST_CASE("adam: zero gradient leaves parameters and advances t") {
  VectorXd p = VectorXd::LinSpaced(5, -1, 1);
  const VectorXd before = p;
  AdamState<double> st(5);
  adam_step<double>(p, VectorXd::Zero(5), st, 1e-3);
  CHECK(p == before);
  CHECK(st.t == 1);
}

TEST_CASE("adam: first step closed form") {
  const double lr = 3e-4;
  VectorXd p = VectorXd::Zero(4);
  VectorXd g(4);
  g << 1.0, -1.0, 2.5, -0.01;
  AdamState<double> st(4);
  adam_step<double>(p, g, st, lr);
  for (int i = 0; i < 4; ++i) {
    // m_hat = g, v_hat = g^2 after bias correction
    const double expected = -lr * g[i] / (std::abs(g[i]) + 1e-8);
    CHECK(p[i] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(p[i] + lr * (g[i] > 0 ? 1 : -1)) <= lr * 1e-6);
  }
  CHECK((st.v.array() >= 0).all());
}

TEST_CASE("adam: deterministic and rejects nonfinite gradients") {
  VectorXd p1 = VectorXd::Ones(3), p2 = p1;
  AdamState<double> s1(3), s2(3);
  VectorXd g(3);
  g << 0.3, -0.1, 2.0;
  for (int i = 0; i < 5; ++i) {
    adam_step<double>(p1, g, s1, 1e-2);
    adam_step<double>(p2, g, s2, 1e-2);
  }
  CHECK(p1 == p2);
  CHECK(s1.t == 5);
  g[1] = std::nan("");
  try {
    adam_step<double>(p1, g, s1, 1e-2);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("index 1") != std::string::npos);
  }
  CHECK_THROWS_AS(adam_step<double>(p1, VectorXd::Zero(2), s1, 1e-2), UsageError);
}

TEST_CASE("ema update") {
  VectorXd t = VectorXd::Zero(3);
  const VectorXd o = VectorXd::Ones(3);
  ema_update<double>(t, o, 1.0);
  CHECK(t == VectorXd::Zero(3));
  ema_update<double>(t, o, 0.995);
  CHECK(t[0] == doctest::Approx(0.005).epsilon(1e-14));
  ema_update<double>(t, o, 0.0);
  CHECK(t == o);
  VectorXd same = o;
  ema_update<double>(same, o, 0.7);
  CHECK(same == o);
  CHECK_THROWS_AS(ema_update<double>(t, VectorXd::Ones(2), 0.5), UsageError);
  CHECK_THROWS_AS(ema_update<double>(t, o, 1.5), UsageError);
}
