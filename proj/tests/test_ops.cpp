#include <doctest.h>

#include <cmath>

#include "exreg/gradcheck.hpp"
#include "exreg/ops.hpp"
#include "oracles.hpp"

using namespace exreg;

namespace {

Tensor run(const std::function<Var(Tape&)>& f) {
  Tape t;
  return f(t).value();
}

Real dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return static_cast<Real>(s);
}

}  // namespace

TEST_SUITE("tensor-autodiff") {
  TEST_CASE("conv2d matches the loop oracle on random shapes") {
    Rng rng(11);
    int instances = 0;
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t N = 1 + rng.index(2), C = 1 + rng.index(3), K = 1 + rng.index(3);
      const std::size_t k = 1 + rng.index(4);
      const int stride = 1 + int(rng.index(2)), pad = int(rng.index(k));
      // Output sizes must divide exactly: padded extent = k + stride * steps.
      const long Hl = long(k) + stride * long(rng.index(4)) - 2 * pad;
      const long Wl = long(k) + stride * long(rng.index(4)) - 2 * pad;
      if (Hl < 1 || Wl < 1) continue;
      const std::size_t H = std::size_t(Hl), W = std::size_t(Wl);
      ++instances;
      const Tensor x = oracle::random_tensor(rng, {N, C, H, W});
      const Tensor w = oracle::random_tensor(rng, {K, C, k, k});
      const Tensor b = trial % 3 ? oracle::random_tensor(rng, {K}) : Tensor();
      const Tensor got = run([&](Tape& t) {
        return conv2d(t.constant(x), t.constant(w), b.empty() ? Var() : t.constant(b), stride, pad);
      });
      REQUIRE(oracle::max_abs_diff(got, oracle::conv2d(x, w, b, stride, pad)) <= 1e-9);
    }
    CHECK(instances >= 100);
  }

  TEST_CASE("transposed_conv2d matches the scatter oracle on random shapes") {
    Rng rng(12);
    int instances = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t N = 1 + rng.index(2), C = 1 + rng.index(3), O = 1 + rng.index(3);
      const std::size_t k = 1 + rng.index(4);
      const int stride = 1 + int(rng.index(2));
      const int pad = int(rng.index((k + 1) / 2));
      const std::size_t H = 1 + rng.index(5), W = 1 + rng.index(5);
      if ((H - 1) * stride + k <= std::size_t(2 * pad) || (W - 1) * stride + k <= std::size_t(2 * pad)) continue;
      const Tensor x = oracle::random_tensor(rng, {N, C, H, W});
      ++instances;
      const Tensor w = oracle::random_tensor(rng, {C, O, k, k});
      const Tensor b = trial % 2 ? oracle::random_tensor(rng, {O}) : Tensor();
      const Tensor got = run([&](Tape& t) {
        return transposed_conv2d(t.constant(x), t.constant(w), b.empty() ? Var() : t.constant(b), stride, pad);
      });
      REQUIRE(oracle::max_abs_diff(got, oracle::transposed_conv2d(x, w, b, stride, pad)) <= 1e-9);
    }
    CHECK(instances >= 100);
  }

  TEST_CASE("transposed_conv2d is the adjoint of conv2d") {
    Rng rng(13);
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t C = 1 + rng.index(3), K = 1 + rng.index(3);
      const Tensor x = oracle::random_tensor(rng, {1, C, 8, 8});
      const Tensor w = oracle::random_tensor(rng, {K, C, 4, 4});
      const Tensor y = oracle::random_tensor(rng, {1, K, 4, 4});
      const Tensor ax = run([&](Tape& t) { return conv2d(t.constant(x), t.constant(w), Var(), 2, 1); });
      const Tensor aty = run([&](Tape& t) { return transposed_conv2d(t.constant(y), t.constant(w), Var(), 2, 1); });
      CHECK(std::abs(dot(ax, y) - dot(x, aty)) <= 1e-9);
    }
  }

  TEST_CASE("avg_pool2d matches block means") {
    Rng rng(14);
    for (int trial = 0; trial < 120; ++trial) {
      const std::size_t k = 1 + rng.index(4);
      const std::size_t H = k * (1 + rng.index(4)), W = k * (1 + rng.index(4));
      const Tensor x = oracle::random_tensor(rng, {1 + rng.index(2), 1 + rng.index(3), H, W});
      const Tensor got = run([&](Tape& t) { return avg_pool2d(t.constant(x), int(k)); });
      REQUIRE(oracle::max_abs_diff(got, oracle::avg_pool2d(x, k)) <= 1e-9);
    }
  }

  TEST_CASE("bilinear_resize reproduces linear ramps and the identity") {
    Tensor ramp({1, 1, 3, 5});
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 5; ++x) ramp.at(0, 0, y, x) = Real(2 * y + 0.5 * x);
    const Tensor up = run([&](Tape& t) { return bilinear_resize(t.constant(ramp), 7, 9); });
    for (std::size_t y = 0; y < 7; ++y)
      for (std::size_t x = 0; x < 9; ++x) {
        const double sy = y * 2.0 / 6.0, sx = x * 4.0 / 8.0;
        CHECK(up.at(0, 0, y, x) == doctest::Approx(2 * sy + 0.5 * sx).epsilon(1e-12));
      }
    const Tensor same = run([&](Tape& t) { return bilinear_resize(t.constant(ramp), 3, 5); });
    CHECK(same == ramp);
  }

  TEST_CASE("matmul, softmax and layer_norm against direct formulas") {
    Rng rng(15);
    const Tensor a = oracle::random_tensor(rng, {3, 4}), b = oracle::random_tensor(rng, {4, 2});
    const Tensor ab = run([&](Tape& t) { return matmul(t.constant(a), t.constant(b)); });
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
        CHECK(std::abs(ab.at(i, j) - s) <= 1e-12);
      }
    const Tensor sm = run([&](Tape& t) { return softmax(t.constant(a), 1); });
    for (std::size_t i = 0; i < 3; ++i) {
      double z = 0;
      for (std::size_t k = 0; k < 4; ++k) z += std::exp(a.at(i, k));
      for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(sm.at(i, k) - std::exp(a.at(i, k)) / z) <= 1e-12);
    }
    const Tensor g = Tensor::full({4}, 1.0), z = Tensor::zeros({4});
    const Tensor ln = run([&](Tape& t) { return layer_norm(t.constant(a), t.constant(g), t.constant(z)); });
    for (std::size_t i = 0; i < 3; ++i) {
      double m = 0, v = 0;
      for (std::size_t k = 0; k < 4; ++k) m += a.at(i, k) / 4;
      for (std::size_t k = 0; k < 4; ++k) v += (a.at(i, k) - m) * (a.at(i, k) - m) / 4;
      for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(ln.at(i, k) - (a.at(i, k) - m) / std::sqrt(v + 1e-5)) <= 1e-12);
    }
  }

  TEST_CASE("shape errors are reported") {
    Tape t;
    const Var a = t.constant(Tensor({2, 3})), b = t.constant(Tensor({3, 2}));
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
    CHECK_THROWS_AS(reshape(a, {4}), std::invalid_argument);
    CHECK_THROWS_AS(slice(a, 1, 2, 5), std::invalid_argument);
  }

  TEST_CASE("backward accumulates through shared inputs") {
    Tape t;
    const Var x = t.variable(Tensor::from({2}, {1.5, -2.0}));
    const Var y = sum(add(mul(x, x), scale(x, 3)));
    t.backward(y);
    const Tensor g = t.grad(x);
    CHECK(g[0] == doctest::Approx(2 * 1.5 + 3));
    CHECK(g[1] == doctest::Approx(2 * -2.0 + 3));
  }

  TEST_CASE("parameter leaves are shared within a tape") {
    Parameter p("p", Tensor::from({2}, {1, 2}));
    Tape t;
    const Var a = t.parameter(p), b = t.parameter(p);
    CHECK(a.id() == b.id());
    t.backward(sum(mul(a, b)));
    const auto grads = t.parameter_grads();
    REQUIRE(grads.size() == 1);
    CHECK(grads[0].first == &p);
    CHECK(grads[0].second[1] == doctest::Approx(4));
  }

  TEST_CASE("ops without gradient inputs record nothing to differentiate") {
    Tape t;
    const Var c = relu(t.constant(Tensor::from({2}, {-1, 1})));
    CHECK_FALSE(c.requires_grad());
  }

  TEST_CASE("every registered op passes the finite-difference check") {
    for (const auto& c : registered_op_cases()) {
      const GradcheckReport r = c.run({});
      INFO(r.name << " worst " << r.worst << " err " << r.max_rel_error);
      CHECK(r.passed());
    }
  }

  TEST_CASE("gradcheck flags a wrong gradient") {
    // An op whose backward pass is deliberately off by a factor of two.
    Parameter p("p", Tensor::from({3}, {0.3, -0.2, 0.9}));
    const GradcheckReport r = gradcheck("broken", {&p}, [&](Tape& t) {
      const Var x = t.parameter(p);
      const Var y = t.record(x.value(), {x}, [x](Tape& tp, const Tensor&, const Tensor& g) {
        Tensor& gx = tp.grad_buffer(x.id());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2 * g[i];
      }, "broken");
      return sum(mul(y, y));
    });
    CHECK_FALSE(r.passed());
  }
}
