#include <cmath>
#include <vector>

#include "doctest.h"
#include "pnr/diffusion.hpp"
#include "support.hpp"

using namespace pnr;

namespace {

Tensor<double> scalar(double v) { return Tensor<double>(Shape{1, 1, 1, 1}, v); }

Tensor<double> values(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return Tensor<double>(Shape{1, 1, 1, n}, std::move(v));
}

}  // namespace

TEST_CASE("forward marginal") {
  pnr::Rng rng(1);
  const auto x0 = testing::random_tensor(Shape{2, 1, 3, 3}, rng);
  const auto eps = testing::random_tensor(Shape{2, 1, 3, 3}, rng);
  CHECK(forward_marginal_sample(x0, 1.0, eps).vec() == x0.vec());
  const auto noisy = forward_marginal_sample(x0, 1e-12, eps);
  for (std::size_t i = 0; i < eps.size(); ++i) CHECK(std::abs(noisy[i] - eps[i]) < 1e-6);
  CHECK(forward_marginal_sample(scalar(0.5), 0.25, scalar(1.0))[0] == doctest::Approx(1.11603).epsilon(1e-5));
  CHECK_THROWS_AS(forward_marginal_sample(x0, 0.0, eps), UsageError);
  CHECK_THROWS_AS(forward_marginal_sample(x0, 0.5, scalar(1.0)), UsageError);
}

TEST_CASE("eps to x0 conversion") {
  CHECK(predict_x0_from_eps(scalar(1.0), scalar(0.0), 0.25)[0] == doctest::Approx(2.0));
  CHECK(predict_x0_from_eps(scalar(0.3), scalar(17.0), 1.0)[0] == 0.3);
  CHECK_THROWS_AS(predict_x0_from_eps(scalar(1.0), scalar(0.0), 1e-9), NumericError);

  pnr::Rng rng(2);
  for (double ab : {0.5, 0.9, 1e-3, 1e-6, kAlphabarFloor}) {
    const auto x0 = testing::random_tensor(Shape{1, 2, 4, 4}, rng);
    const auto eps = testing::random_tensor(Shape{1, 2, 4, 4}, rng);
    const auto back = predict_x0_from_eps(forward_marginal_sample(x0, ab, eps), eps, ab);
    for (std::size_t i = 0; i < x0.size(); ++i) CHECK(std::abs(back[i] - x0[i]) <= 1e-6);
  }
}

TEST_CASE("reverse step") {
  const auto s = build_linear_schedule(2, 0.1, 0.2);
  // t = 1 returns x0_hat whatever the noise
  CHECK(reverse_step(scalar(0.4), scalar(-0.7), 1, s, scalar(5.0))[0] == -0.7);
  CHECK(reverse_step(scalar(1.0), scalar(1.0), 2, s, scalar(0.0))[0] == doctest::Approx(0.99707).epsilon(1e-5));
  CHECK_THROWS_AS(reverse_step(scalar(1.0), scalar(1.0), 3, s, scalar(0.0)), UsageError);
}

TEST_CASE("reverse step without noise is linear and deterministic") {
  const auto s = build_linear_schedule(20, 1e-3, 0.1);
  pnr::Rng rng(4);
  const Shape sh{1, 1, 2, 3};
  const auto a = testing::random_tensor(sh, rng), b = testing::random_tensor(sh, rng);
  const auto c = testing::random_tensor(sh, rng), d = testing::random_tensor(sh, rng);
  const Tensor<double> zero(sh);
  const double u = 0.7, v = -1.3;
  Tensor<double> mix_x(sh), mix_z(sh);
  for (std::size_t i = 0; i < mix_x.size(); ++i) {
    mix_x[i] = u * a[i] + v * b[i];
    mix_z[i] = u * c[i] + v * d[i];
  }
  const auto lhs = reverse_step(mix_z, mix_x, 9, s, zero);
  const auto r1 = reverse_step(c, a, 9, s, zero), r2 = reverse_step(d, b, 9, s, zero);
  for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(lhs[i] == doctest::Approx(u * r1[i] + v * r2[i]).epsilon(1e-12));
  CHECK(reverse_step(c, a, 9, s, zero).vec() == r1.vec());
}

TEST_CASE("reverse step samples the Bayes posterior") {
  const auto s = build_linear_schedule(10, 0.02, 0.3);
  const int t = 6;
  const double x0 = 0.4;
  const double xt = 0.1;
  const auto m = testing::integrate_posterior(s.alpha(t), s.alphabar(t - 1), x0, xt);
  const int n = 100000;
  Tensor<double> noise(Shape{1, 1, 1, n});
  pnr::Rng rng(5);
  for (auto& e : noise.span()) e = rng.normal();
  const auto out = reverse_step(Tensor<double>(noise.shape(), xt), Tensor<double>(noise.shape(), x0), t, s, noise);
  double mean = 0.0, var = 0.0;
  for (double v : out.span()) mean += v;
  mean /= n;
  for (double v : out.span()) var += (v - mean) * (v - mean);
  var /= n - 1;
  CHECK(std::abs(mean - m.mean) / std::abs(m.mean) < 0.02);
  CHECK(std::abs(var - m.var) / m.var < 0.02);
}

TEST_CASE("chained single steps reproduce the marginal") {
  pnr::Rng rng(6);
  for (int T : {2, 5, 50}) {
    const auto s = build_linear_schedule(T, 0.01, 0.2);
    const int n = 10000;
    const double x0 = 0.6;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      double x = x0;
      for (int t = 1; t <= T; ++t) x = std::sqrt(s.alpha(t)) * x + std::sqrt(1.0 - s.alpha(t)) * rng.normal();
      sum += x;
      sq += x * x;
    }
    const double mean = sum / n;
    const double var = (sq - n * mean * mean) / (n - 1);
    const double want_mean = std::sqrt(s.alphabar(T)) * x0;
    const double want_var = 1.0 - s.alphabar(T);
    CHECK(std::abs(mean - want_mean) < 3.0 * std::sqrt(want_var / n));
    CHECK(std::abs(var - want_var) < 3.0 * want_var * std::sqrt(2.0 / (n - 1)));
  }
}

TEST_CASE("base loss") {
  const auto e = values({0.3, -0.2, 1.5});
  CHECK(base_loss(e, e) == 0.0);
  CHECK(base_loss(values({1, 1, 1}), values({0, 0, 0})) == 1.0);
  CHECK(base_loss(values({1, -1}), values({0, 0})) == 1.0);
  pnr::Rng rng(8);
  const auto a = testing::random_tensor(Shape{2, 3, 4, 5}, rng), b = testing::random_tensor(Shape{2, 3, 4, 5}, rng);
  CHECK(base_loss(a, b) > 0.0);
  CHECK(base_loss(a, b) == base_loss(b, a));
  CHECK_THROWS_AS(base_loss(a, e), UsageError);
}

TEST_CASE("base loss gradient is the sign over the count") {
  const auto g = base_loss_grad(values({1.0, 0.0, 2.0, 3.0}), values({2.0, -1.0, 2.0, 1.0}));
  CHECK(g.vec() == std::vector<double>{0.25, -0.25, 0.0, -0.25});
}

TEST_CASE("residual target") {
  pnr::Rng rng(9);
  const auto x0 = testing::random_tensor(Shape{1, 1, 4, 4}, rng);
  const auto zero = residual_target(x0, x0);
  for (double v : zero.span()) CHECK(v == 0.0);
  const auto r = residual_target(Tensor<double>(Shape{1, 1, 2, 2}, 0.5), Tensor<double>(Shape{1, 1, 2, 2}, 0.2));
  for (double v : r.span()) CHECK(v == doctest::Approx(0.3));
  CHECK(residual_target(x0, Tensor<double>(x0.shape())).vec() == x0.vec());
}
