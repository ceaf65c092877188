#include <cmath>
#include <limits>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "xraft/adam.hpp"
#include "xraft/errors.hpp"
#include "xraft/ops.hpp"

using namespace xraft;
using oracle::random_tensor;

namespace {

struct GraphReset {
  GraphReset() { active_graph().clear(); }
  ~GraphReset() { active_graph().clear(); }
};

}  // namespace

TEST_CASE("conv2d scalar and box-sum cases") {
  Tensor x({1, 1, 1, 1}, {2.0});
  Tensor w({1, 1, 1, 1}, {3.0});
  Tensor b({1}, {0.0});
  CHECK(ops::conv2d(x, w, b, 1, 0).item() == 6.0);

  Tensor ones({1, 1, 3, 3}, 1.0);
  CHECK(ops::conv2d(ones, ones, b, 1, 0).item() == 9.0);
}

TEST_CASE("conv2d matches the quadruple-loop oracle") {
  Rng rng(11);
  for (auto [stride, pad] : {std::pair{1, 0}, std::pair{1, 1}, std::pair{2, 1}, std::pair{2, 2}}) {
    const Tensor x = random_tensor({2, 3, 8, 8}, rng);
    const Tensor w = random_tensor({4, 3, 3, 3}, rng);
    const Tensor b = random_tensor({4}, rng);
    const auto ref = oracle::conv2d(x, w, b, stride, pad);
    const Tensor y = ops::conv2d(x, w, b, stride, pad);
    REQUIRE(static_cast<std::size_t>(y.numel()) == ref.size());
    double err = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(y.values()[i] - ref[i]));
    CHECK(err <= 1e-6);
  }
  PrecisionScope p64(Precision::kFloat64);
  const Tensor x = random_tensor({1, 3, 8, 8}, rng);
  const Tensor w = random_tensor({5, 3, 3, 3}, rng);
  const Tensor b = random_tensor({5}, rng);
  const auto ref = oracle::conv2d(x, w, b, 1, 1);
  const Tensor y = ops::conv2d(x, w, b, 1, 1);
  double err = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(y.values()[i] - ref[i]));
  CHECK(err <= 1e-12);
}

TEST_CASE("conv2d rejects mismatched shapes") {
  Tensor x({1, 3, 4, 4});
  CHECK_THROWS_AS(ops::conv2d(x, Tensor({2, 2, 3, 3}), Tensor(), 1, 0), ShapeError);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor({2, 3, 7, 7}), Tensor(), 1, 0), ShapeError);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor({2, 3, 3, 3}), Tensor({3}), 1, 0), ShapeError);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor({2, 3, 3, 3}), Tensor(), 0, 0), ShapeError);
}

TEST_CASE("bilinear_sample identity, zero padding and oracle") {
  Rng rng(5);
  const Tensor x = random_tensor({1, 2, 4, 4}, rng);
  const Tensor same = ops::bilinear_sample(x, pixel_grid(1, 4, 4));
  CHECK(oracle::max_abs_diff(same, x) == 0.0);

  Tensor far = pixel_grid(1, 4, 4);
  for (double& v : far.mutable_values()) v += 100.0;
  const Tensor outside = ops::bilinear_sample(x, far);
  for (double v : outside.values()) CHECK(v == 0.0);

  const Tensor coords = random_tensor({1, 2, 4, 4}, rng, 0.0, 3.0);
  const Tensor y = ops::bilinear_sample(x, coords);
  double err = 0.0;
  for (int c = 0; c < 2; ++c)
    for (int p = 0; p < 16; ++p) {
      const double ref = oracle::bilinear(x.values().data() + c * 16, 4, 4, coords[p], coords[16 + p]);
      err = std::max(err, std::abs(y[c * 16 + p] - ref));
    }
  CHECK(err <= 1e-6);
}

TEST_CASE("correlation_volume cases") {
  Tensor a({1, 4, 1, 1}, {1, 2, 3, 4});
  Tensor b({1, 4, 1, 1}, {0.5, -1, 2, 1});
  CHECK(ops::correlation_volume(a, b).item() == doctest::Approx((0.5 - 2 + 6 + 4) / 2.0));

  // Unit-norm, distinct columns: each source correlates best with itself.
  Rng rng(3);
  Tensor f = random_tensor({1, 8, 3, 3}, rng);
  auto fv = f.mutable_values();
  for (int p = 0; p < 9; ++p) {
    double n = 0;
    for (int d = 0; d < 8; ++d) n += fv[d * 9 + p] * fv[d * 9 + p];
    for (int d = 0; d < 8; ++d) fv[d * 9 + p] /= std::sqrt(n);
  }
  const Tensor c = ops::correlation_volume(f, f);
  const auto ref = oracle::correlation(f, f);
  for (int p = 0; p < 9; ++p) {
    int best = 0;
    for (int q = 0; q < 9; ++q)
      if (ref[p * 9 + q] > ref[p * 9 + best]) best = q;
    CHECK(best == p);
    int best_impl = 0;
    for (int q = 0; q < 9; ++q)
      if (c[p * 9 + q] > c[p * 9 + best_impl]) best_impl = q;
    CHECK(best_impl == p);
  }

  const Tensor zero = ops::correlation_volume(f, Tensor(f.shape()));
  for (double v : zero.values()) CHECK(v == 0.0);

  const Tensor g = random_tensor({2, 5, 3, 4}, rng), h = random_tensor({2, 5, 3, 4}, rng);
  const auto r2 = oracle::correlation(g, h);
  const Tensor c2 = ops::correlation_volume(g, h);
  CHECK(c2.shape() == Shape{2, 3, 4, 3, 4});
  double err = 0.0;
  for (std::size_t i = 0; i < r2.size(); ++i) err = std::max(err, std::abs(c2.values()[i] - r2[i]));
  CHECK(err <= 1e-6);
  CHECK_THROWS_AS(ops::correlation_volume(g, Tensor({2, 5, 3, 3})), ShapeError);
}

TEST_CASE("avg_pool2 cases") {
  CHECK(ops::avg_pool2(Tensor({1, 1, 4, 4}, 0.75)).values()[3] == 0.75);
  CHECK(ops::avg_pool2(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})).item() == 2.5);
  Rng rng(8);
  const Tensor x = random_tensor({2, 3, 6, 4}, rng);
  const auto ref = oracle::avg_pool2(x);
  const Tensor y = ops::avg_pool2(x);
  double err = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(y.values()[i] - ref[i]));
  CHECK(err <= 1e-6);
  CHECK_THROWS_AS(ops::avg_pool2(Tensor({1, 1, 3, 4})), ShapeError);
}

TEST_CASE("elementwise definitions") {
  const Tensor r = ops::relu(Tensor({2}, {-1.0, 2.0}));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 2.0);
  CHECK(ops::sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  const Tensor up = ops::upsample_bilinear(Tensor({1, 2, 3, 2}, 0.3), 8);
  CHECK(up.shape() == Shape{1, 2, 24, 16});
  for (double v : up.values()) CHECK(v == doctest::Approx(0.3).epsilon(1e-7));

  Rng rng(1);
  const Tensor a = random_tensor({1, 2, 3, 3}, rng), b = random_tensor({1, 3, 3, 3}, rng);
  const Tensor cat = ops::concat({a, b}, 1);
  CHECK(cat.shape() == Shape{1, 5, 3, 3});
  CHECK(oracle::max_abs_diff(ops::slice(cat, 1, 2, 3), b) == 0.0);
  CHECK_THROWS_AS(ops::add(a, b), ShapeError);
  CHECK_THROWS_AS(ops::concat({a, Tensor({1, 2, 2, 3})}, 1), ShapeError);
}

TEST_CASE("backward basics") {
  GraphReset reset;
  PrecisionScope p64(Precision::kFloat64);
  Tensor x({2, 3}, 0.4);
  x.set_requires_grad(true);
  backward(ops::sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  active_graph().clear();
  Tensor s({1}, {3.0});
  s.set_requires_grad(true);
  backward(ops::sum(ops::mul(s, s)));
  CHECK(s.grad()[0] == 6.0);

  // Without a reset, a second pass accumulates.
  backward(ops::sum(ops::mul(s, s)));
  CHECK(s.grad()[0] == 12.0);

  CHECK_THROWS_AS(backward(x), ShapeError);
}

TEST_CASE("graph replay after a grad reset gives identical gradients") {
  GraphReset reset;
  PrecisionScope p64(Precision::kFloat64);
  Rng rng(21);
  Tensor x = random_tensor({1, 2, 6, 6}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng);
  w.set_requires_grad(true);
  x.set_requires_grad(true);
  const Tensor loss = gradcheck::project(ops::tanh(ops::instance_norm(ops::conv2d(x, w, Tensor(), 1, 1))));
  backward(loss);
  const std::vector<double> first(w.grad().begin(), w.grad().end());
  const std::vector<double> first_x(x.grad().begin(), x.grad().end());
  w.clear_grad();
  x.clear_grad();
  backward(loss);
  CHECK(std::equal(first.begin(), first.end(), w.grad().begin()));
  CHECK(std::equal(first_x.begin(), first_x.end(), x.grad().begin()));
}

TEST_CASE("ops are deterministic") {
  Rng a(77), b(77);
  const Tensor x1 = random_tensor({1, 3, 8, 8}, a), x2 = random_tensor({1, 3, 8, 8}, b);
  const Tensor w1 = random_tensor({4, 3, 3, 3}, a), w2 = random_tensor({4, 3, 3, 3}, b);
  const Tensor y1 = ops::correlation_volume(ops::conv2d(x1, w1, Tensor(), 1, 1), ops::conv2d(x1, w1, Tensor(), 1, 1));
  const Tensor y2 = ops::correlation_volume(ops::conv2d(x2, w2, Tensor(), 1, 1), ops::conv2d(x2, w2, Tensor(), 1, 1));
  CHECK(std::equal(y1.values().begin(), y1.values().end(), y2.values().begin()));
}

TEST_CASE("non-finite values are detectable") {
  Tensor t({3}, {1.0, std::numeric_limits<double>::quiet_NaN(), 2.0});
  CHECK_FALSE(t.all_finite());
  CHECK(Tensor({3}, 1.0).all_finite());
}

TEST_CASE("32-bit mode rounds stored values") {
  PrecisionScope p32(Precision::kFloat32);
  const Tensor t({1}, {0.1});
  CHECK(t.item() == static_cast<double>(0.1f));
  PrecisionScope p64(Precision::kFloat64);
  CHECK(Tensor({1}, {0.1}).item() == 0.1);
}

// ---------------------------------------------------------------------------
// Finite-difference checks, one per differentiable kernel.

TEST_CASE("gradient: conv2d") {
  Rng rng(31);
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{1, 0}}) {
    auto r = gradcheck::check(
        [=](std::vector<Tensor>& in) { return gradcheck::project(ops::conv2d(in[0], in[1], in[2], stride, pad)); },
        {random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)}, {0, 1, 2});
    CHECK(r.ok(1e-4));
  }
  auto r = gradcheck::check(
      [](std::vector<Tensor>& in) { return gradcheck::project(ops::conv2d(in[0], in[1], in[2], 1, 0)); },
      {random_tensor({1, 4, 3, 3}, rng), random_tensor({2, 4, 1, 1}, rng), random_tensor({2}, rng)}, {0, 1, 2});
  CHECK(r.ok(1e-4));
}

TEST_CASE("gradient: bilinear_sample wrt input and coords") {
  Rng rng(32);
  auto r = gradcheck::check([](std::vector<Tensor>& in) { return gradcheck::project(ops::bilinear_sample(in[0], in[1])); },
                            {random_tensor({1, 3, 5, 5}, rng), random_tensor({1, 2, 4, 4}, rng, -1.3, 5.3)}, {0, 1});
  CHECK(r.ok(1e-4));
}

TEST_CASE("gradient: correlation_volume and corr_lookup") {
  Rng rng(33);
  auto r = gradcheck::check(
      [](std::vector<Tensor>& in) { return gradcheck::project(ops::correlation_volume(in[0], in[1])); },
      {random_tensor({1, 4, 3, 3}, rng), random_tensor({1, 4, 3, 3}, rng)}, {0, 1});
  CHECK(r.ok(1e-4));
  auto r2 = gradcheck::check(
      [](std::vector<Tensor>& in) { return gradcheck::project(ops::corr_lookup(in[0], in[1], 1)); },
      {random_tensor({1, 3, 3, 4, 4}, rng), random_tensor({1, 2, 3, 3}, rng, -0.7, 3.7)}, {0, 1});
  CHECK(r2.ok(1e-4));
}

TEST_CASE("gradient: avg_pool2, upsample_bilinear, instance_norm") {
  Rng rng(34);
  auto r = gradcheck::check([](std::vector<Tensor>& in) { return gradcheck::project(ops::avg_pool2(in[0])); },
                            {random_tensor({1, 2, 4, 6}, rng)}, {0});
  CHECK(r.ok(1e-4));
  auto r2 = gradcheck::check([](std::vector<Tensor>& in) { return gradcheck::project(ops::upsample_bilinear(in[0], 4)); },
                             {random_tensor({1, 2, 3, 2}, rng)}, {0});
  CHECK(r2.ok(1e-4));
  auto r3 = gradcheck::check([](std::vector<Tensor>& in) { return gradcheck::project(ops::instance_norm(in[0])); },
                             {random_tensor({2, 2, 3, 3}, rng)}, {0});
  CHECK(r3.ok(1e-4));
}

TEST_CASE("gradient: elementwise suite") {
  Rng rng(35);
  const Shape s{1, 2, 3, 3};
  auto check_binary = [&](auto op) {
    return gradcheck::check([op](std::vector<Tensor>& in) { return gradcheck::project(op(in[0], in[1])); },
                            {random_tensor(s, rng), random_tensor(s, rng)}, {0, 1});
  };
  CHECK(check_binary(ops::add).ok(1e-4));
  CHECK(check_binary(ops::sub).ok(1e-4));
  CHECK(check_binary(ops::mul).ok(1e-4));
  auto check_unary = [&](auto op) {
    return gradcheck::check([op](std::vector<Tensor>& in) { return gradcheck::project(op(in[0])); },
                            {random_tensor(s, rng)}, {0});
  };
  CHECK(check_unary([](const Tensor& t) { return ops::relu(t); }).ok(1e-4));
  CHECK(check_unary([](const Tensor& t) { return ops::tanh(t); }).ok(1e-4));
  CHECK(check_unary([](const Tensor& t) { return ops::sigmoid(t); }).ok(1e-4));
  CHECK(check_unary([](const Tensor& t) { return ops::scale(t, -2.5); }).ok(1e-4));
  CHECK(check_unary([](const Tensor& t) { return ops::mean(t); }).ok(1e-4));
  CHECK(check_unary([](const Tensor& t) { return ops::reshape(t, {3, 6}); }).ok(1e-4));
  CHECK(check_unary([](const Tensor& t) { return ops::slice(t, 2, 1, 2); }).ok(1e-4));
  auto r = gradcheck::check(
      [](std::vector<Tensor>& in) { return gradcheck::project(ops::concat({in[0], in[1]}, 1)); },
      {random_tensor(s, rng), random_tensor({1, 1, 3, 3}, rng)}, {0, 1});
  CHECK(r.ok(1e-4));
}

TEST_CASE("gradient: endpoint_error with and without mask") {
  Rng rng(36);
  Tensor mask({1, 1, 3, 3}, {1, 0, 1, 1, 1, 0, 1, 1, 1});
  auto r = gradcheck::check([&](std::vector<Tensor>& in) { return ops::endpoint_error(in[0], in[1], mask); },
                            {random_tensor({1, 2, 3, 3}, rng), random_tensor({1, 2, 3, 3}, rng)}, {0, 1});
  CHECK(r.ok(1e-4));
  auto r2 = gradcheck::check([](std::vector<Tensor>& in) { return ops::endpoint_error(in[0], in[1]); },
                             {random_tensor({2, 2, 2, 3}, rng), random_tensor({2, 2, 2, 3}, rng)}, {0});
  CHECK(r2.ok(1e-4));
  CHECK_THROWS_AS(ops::endpoint_error(Tensor({1, 2, 3, 3}), Tensor({1, 2, 3, 3}), Tensor({1, 1, 3, 3})),
                  NoSupervisablePixels);
}

// ---------------------------------------------------------------------------
// Adam

namespace {

// Scalar textbook Adam, independent of the library loop.
double scalar_adam(double p, const std::vector<double>& grads, double lr, double b1 = 0.9, double b2 = 0.999,
                   double eps = 1e-8) {
  double m = 0.0, v = 0.0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, static_cast<double>(t)));
    const double vh = v / (1 - std::pow(b2, static_cast<double>(t)));
    p -= lr * mh / (std::sqrt(vh) + eps);
  }
  return p;
}

}  // namespace

TEST_CASE("adam step") {
  PrecisionScope p64(Precision::kFloat64);
  std::vector<Tensor> params{Tensor({1}, {0.5})};
  params[0].set_requires_grad(true);
  AdamState state(params);
  CHECK(state.config.learning_rate == 5e-5);

  params[0].mutable_grad();
  detail::grad_of(*params[0].storage())[0] = 0.0;
  adam_step(params, state);
  CHECK(params[0].item() == 0.5);
  CHECK(state.step == 1);

  std::vector<Tensor> q{Tensor({1}, {0.5})};
  AdamState s2(q, AdamConfig{1e-3});
  detail::grad_of(*q[0].storage())[0] = 1.0;
  adam_step(q, s2);
  CHECK(0.5 - q[0].item() == doctest::Approx(1e-3 / (1 + 1e-8)).epsilon(1e-12));
  adam_step(q, s2);
  CHECK(std::abs(q[0].item() - scalar_adam(0.5, {1.0, 1.0}, 1e-3)) <= 1e-12);
  CHECK(s2.step == 2);

  CHECK_THROWS_AS(AdamState(q, AdamConfig{0.0}), ConfigError);
  CHECK_THROWS_AS(AdamState(q, AdamConfig{-1.0}), ConfigError);
}

TEST_CASE("adam skips parameters without gradient") {
  std::vector<Tensor> params{Tensor({2}, {1.0, 2.0}), Tensor({1}, {3.0})};
  AdamState state(params, AdamConfig{0.1});
  detail::grad_of(*params[1].storage())[0] = 2.0;
  adam_step(params, state);
  CHECK(params[0][0] == 1.0);
  CHECK(params[0][1] == 2.0);
  CHECK(params[1][0] != 3.0);
}
