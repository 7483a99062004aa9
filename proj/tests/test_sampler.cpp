#include <cmath>

#include "doctest.h"
#include "pnr/checkpoint.hpp"
#include "pnr/diffusion.hpp"
#include "pnr/sampler.hpp"
#include "pnr/sweep.hpp"
#include "support.hpp"

using namespace pnr;

namespace {

// Residual prior N(m, s^2) per pixel; denoise returns the exact E[eps | z].
class GaussianOracle : public RestorationModel {
 public:
  GaussianOracle(double x_init, double m, double s) : x_init_(x_init), m_(m), s_(s) {}
  ImageTensor predict(const ImageTensor& y) override { return ImageTensor(y.shape(), static_cast<float>(x_init_)); }
  ImageTensor denoise(const ImageTensor& zt, std::span<const double> levels, const ImageTensor&) override {
    ImageTensor out(zt.shape());
    for (int n = 0; n < zt.shape().n; ++n) {
      const double a = levels.size() == 1 ? levels[0] : levels[n];
      auto z = zt.item(n);
      auto o = out.item(n);
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<float>(testing::optimal_eps(z[i], a, m_, s_));
    }
    return out;
  }

 private:
  double x_init_, m_, s_;
};

class ZeroDenoiser : public RestorationModel {
 public:
  ImageTensor predict(const ImageTensor& y) override { return ImageTensor(y.shape(), 0.1f); }
  ImageTensor denoise(const ImageTensor& zt, std::span<const double>, const ImageTensor&) override {
    return ImageTensor(zt.shape());
  }
};

std::unique_ptr<Model<float>> random_model(std::uint64_t seed) {
  auto m = std::make_unique<Model<float>>(ModelShape{1, 4, 4, 1}, seed);
  pnr::Rng rng(seed);
  for (auto* store : {&m->predictor.net().params(), &m->denoiser.net().params()})
    for (std::size_t i = 0; i < store->tensor_count(); ++i)
      for (auto& v : (*store)[i].value) v = static_cast<float>(0.1 * rng.uniform(-1, 1));
  m->enable_ema();
  return m;
}

}  // namespace

TEST_CASE("sample config validation") {
  SampleConfig c;
  c.steps = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = SampleConfig{};
  c.var_end = 1.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = SampleConfig{};
  c.n_samples = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("exactly T denoiser calls and one predictor call") {
  GaussianOracle oracle(0.0, 0.1, 0.3);
  const ImageTensor y(Shape{1, 1, 4, 4}, 0.0f);
  for (int n : {1, 4}) {
    CountingModel counted(oracle);
    SampleConfig c;
    c.steps = 10;
    c.n_samples = n;
    sample_set(counted, y, c);
    CHECK(counted.denoiser_calls == 10);
    CHECK(counted.predictor_calls == 1);
  }
  CountingModel counted(oracle);
  SampleConfig c;
  c.steps = 37;
  c.n_samples = 8;
  sample_average(counted, y, c);
  CHECK(counted.denoiser_calls == 37);
  CHECK(counted.predictor_calls == 1);
}

TEST_CASE("zero denoiser with one near-noiseless step returns x_init + z_T") {
  ZeroDenoiser model;
  SampleConfig c;
  c.steps = 1;
  c.var_end = 1e-6;
  c.seed = 42;
  const ImageTensor y(Shape{1, 1, 2, 3}, 0.0f);
  const auto out = sample(model, y, c);
  pnr::Rng stream(sample_stream_seed(42, 0, 0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z = stream.normal();
    const double want = std::clamp(0.1 + z / std::sqrt(1.0 - 1e-6), -1.0, 1.0);
    CHECK(out[i] == doctest::Approx(want).epsilon(1e-5));
  }
}

TEST_CASE("single-sample average equals sample") {
  GaussianOracle oracle(0.2, 0.0, 0.4);
  const ImageTensor y(Shape{1, 1, 5, 5}, 0.0f);
  SampleConfig c;
  c.steps = 20;
  c.seed = 3;
  CHECK(sample_average(oracle, y, c).vec() == sample(oracle, y, c).vec());
}

TEST_CASE("sample streams do not depend on how the set is split") {
  GaussianOracle oracle(0.0, 0.0, 0.4);
  const ImageTensor y(Shape{1, 1, 3, 3}, 0.0f);
  const auto s = build_inference_schedule(15, 0.1);
  const auto all = sample_residuals(oracle, y, s, 5, 2, 0, 4);
  const auto tail = sample_residuals(oracle, y, s, 5, 2, 2, 2);
  for (int i = 0; i < 2; ++i) CHECK(batch_item(all, 2 + i).vec() == batch_item(tail, i).vec());
}

TEST_CASE("a point-mass posterior makes sampling deterministic and averaging idempotent") {
  GaussianOracle oracle(0.1, 0.3, 0.0);
  const ImageTensor y(Shape{1, 1, 4, 4}, 0.0f);
  SampleConfig c;
  c.steps = 30;
  c.n_samples = 6;
  const auto singles = sample_set(oracle, y, c);
  for (const auto& s : singles)
    for (float v : s.span()) CHECK(v == doctest::Approx(0.4).epsilon(1e-5));
  c.average = true;
  const auto avg = sample_average(oracle, y, c);
  for (std::size_t i = 0; i < avg.size(); ++i) CHECK(avg[i] == doctest::Approx(singles[0][i]).epsilon(1e-6));
}

TEST_CASE("the sampler recovers a Gaussian residual posterior") {
  const double m = 0.25, s = 0.3;
  GaussianOracle oracle(0.0, m, s);
  // fine enough that the ancestral sampler's own variance deficit is ~0.5%
  const auto sched = build_linear_schedule(5000, 1e-6, 0.005);
  const ImageTensor y(Shape{1, 1, 1, 1}, 0.0f);
  const int n = 20000;
  const auto z = sample_residuals(oracle, y, sched, 7, 0, 0, n);
  double mean = 0.0;
  for (float v : z.span()) mean += v;
  mean /= n;
  double var = 0.0;
  for (float v : z.span()) var += (v - mean) * (v - mean);
  var /= n - 1;
  CHECK(std::abs(mean - m) / m < 0.02);
  CHECK(std::abs(var - s * s) / (s * s) < 0.03);
}

TEST_CASE("averaging N samples divides the per-pixel variance by N") {
  GaussianOracle oracle(0.0, 0.0, 0.2);
  const ImageTensor y(Shape{1, 1, 4, 4}, 0.0f);
  SampleConfig c;
  c.steps = 20;
  c.var_end = 0.5;
  c.n_samples = 8;
  const int K = 400;
  std::vector<double> s1(16), s2(16), a1(16), a2(16);
  for (int k = 0; k < K; ++k) {
    const auto set = sample_set(oracle, y, c, static_cast<std::uint64_t>(k));
    const auto avg = mean_of(set);
    for (int i = 0; i < 16; ++i) {
      s1[i] += set[0][i];
      s2[i] += set[0][i] * set[0][i];
      a1[i] += avg[i];
      a2[i] += avg[i] * avg[i];
    }
  }
  double vs = 0.0, va = 0.0;
  for (int i = 0; i < 16; ++i) {
    vs += (s2[i] - s1[i] * s1[i] / K) / (K - 1);
    va += (a2[i] - a1[i] * a1[i] / K) / (K - 1);
  }
  CHECK(va / vs == doctest::Approx(1.0 / 8.0).epsilon(0.2));
}

TEST_CASE("eps-form refine step agrees with the explicit conversion") {
  const auto s = build_linear_schedule(50, 0.05, 0.4);
  pnr::Rng rng(8);
  const auto z = testing::random_image(Shape{1, 1, 3, 3}, rng);
  const auto e = testing::random_image(Shape{1, 1, 3, 3}, rng);
  const auto noise = testing::random_image(Shape{1, 1, 3, 3}, rng);
  const int t = 20;
  const auto explicit_form = reverse_step(z, predict_x0_from_eps(z, e, s.alphabar(t)), t, s, noise);
  const double a = s.alpha(t), ab = s.alphabar(t);
  const double sd = std::sqrt(posterior_coeffs(s, t).beta);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double mu = (z[i] - (1 - a) / std::sqrt(1 - ab) * e[i]) / std::sqrt(a);
    CHECK(explicit_form[i] == doctest::Approx(mu + sd * noise[i]).epsilon(1e-5));
  }
  // below the floor the sampler switches forms instead of failing
  const auto deep = build_linear_schedule(2000, 0.02, 0.05);
  REQUIRE(deep.alphabar(2000) < kAlphabarFloor);
  const auto out = refine_step(z, e, 2000, deep, noise);
  CHECK(out.all_finite());
}

TEST_CASE("refine step clips the x0 estimate to the residual range") {
  const auto s = build_linear_schedule(50, 0.05, 0.4);
  pnr::Rng rng(9);
  const auto z = testing::random_image(Shape{1, 1, 4, 4}, rng, -3, 3);
  const auto e = testing::random_image(Shape{1, 1, 4, 4}, rng, -3, 3);
  const auto noise = testing::random_image(Shape{1, 1, 4, 4}, rng);
  for (int t : {2, 10, 30}) {
    auto x0 = predict_x0_from_eps(z, e, s.alphabar(t));
    bool clipped = false;
    for (float& v : x0.span()) {
      clipped = clipped || std::abs(v) > kResidualBound;
      v = std::clamp(v, -2.0f, 2.0f);
    }
    CHECK(clipped);
    CHECK(refine_step(z, e, t, s, noise).vec() == reverse_step(z, x0, t, s, noise).vec());
  }
}

TEST_CASE("a poor denoiser cannot blow the chain up") {
  // eps_hat = 0.3 z under a harsh schedule: without the clip |z| grows ~1.2x per step
  const auto s = build_inference_schedule(300, 0.5);
  pnr::Rng rng(10);
  auto z = testing::random_image(Shape{1, 1, 8, 8}, rng);
  for (int t = s.steps(); t >= 1; --t) {
    ImageTensor e = z;
    for (float& v : e.span()) v *= 0.3f;
    ImageTensor noise(z.shape());
    for (float& v : noise.span()) v = static_cast<float>(rng.normal());
    z = refine_step(z, e, t, s, noise);
    for (float v : z.span()) REQUIRE(std::abs(v) < 20.0f);
  }
}

TEST_CASE("network model: EMA weights and reloaded checkpoints sample identically") {
  auto m = random_model(11);
  const auto bytes = encode_checkpoint(TrainerConfig{.model = ModelShape{1, 4, 4, 1}}, 0, 0, *m);
  NetworkModel before(std::move(m));
  NetworkModel after(std::move(decode_checkpoint(bytes).model));
  pnr::Rng rng(12);
  const auto y = testing::random_image(Shape{1, 1, 12, 12}, rng);
  SampleConfig c;
  c.steps = 5;
  c.n_samples = 3;
  c.seed = 4;
  const auto a = sample_set(before, y, c), b = sample_set(after, y, c);
  for (int i = 0; i < 3; ++i) CHECK(a[i].vec() == b[i].vec());
}

TEST_CASE("non-finite parameters are rejected") {
  auto m = random_model(13);
  m->denoiser.net().params()[0].value[0] = std::nanf("");
  CHECK_THROWS_AS(NetworkModel(std::move(m), false), NumericError);
}

TEST_CASE("one-cell sweep") {
  GaussianOracle oracle(0.0, 0.0, 0.2);
  std::vector<data::ImagePair> eval;
  pnr::Rng rng(14);
  for (int i = 0; i < 3; ++i) {
    const auto img = testing::random_image(Shape{1, 1, 8, 8}, rng, -0.5, 0.5);
    eval.push_back({img, img});
  }
  SweepGrid g{{5}, {0.1}, {2}};
  const auto rows = pd_sweep(oracle, eval, g, {.seed = 1});
  REQUIRE(rows.size() == 1);
  const auto csv = sweep_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  CHECK(csv.rfind("T,var_end,n_avg,psnr_mean,ssim_mean,pixel_std_mean,wall_ms\n", 0) == 0);
  CHECK(rows[0].wall_ms == 0);
  CHECK(rows[0].pixel_std_mean > 0.0);
  CHECK_THROWS_AS(pd_sweep(oracle, std::span<const data::ImagePair>{}, g), UsageError);
}

TEST_CASE("sweep rows come in grid order and reproduce byte for byte") {
  GaussianOracle oracle(0.0, 0.0, 0.2);
  std::vector<data::ImagePair> eval;
  pnr::Rng rng(15);
  for (int i = 0; i < 2; ++i) {
    const auto img = testing::random_image(Shape{1, 1, 8, 8}, rng, -0.5, 0.5);
    eval.push_back({img, img});
  }
  SweepGrid g{{3, 6}, {0.05, 0.2}, {1, 4}};
  const auto a = pd_sweep(oracle, eval, g, {.seed = 2});
  const auto b = pd_sweep(oracle, eval, g, {.seed = 2});
  CHECK(sweep_csv(a) == sweep_csv(b));
  REQUIRE(a.size() == 8);
  std::size_t k = 0;
  for (int t : g.steps)
    for (double v : g.var_ends)
      for (int n : g.n_avg) {
        CHECK(a[k].steps == t);
        CHECK(a[k].var_end == v);
        CHECK(a[k].n_avg == n);
        ++k;
      }
  // averages of samples around the truth land closer to it
  for (std::size_t i = 0; i < a.size(); i += 2) CHECK(a[i + 1].psnr_mean > a[i].psnr_mean);
}

TEST_CASE("grid lists") {
  CHECK(parse_int_list("10, 20,30") == std::vector<int>{10, 20, 30});
  CHECK(parse_double_list("0.5,1e-2") == std::vector<double>{0.5, 0.01});
  CHECK_THROWS_AS(parse_int_list("1,,2"), UsageError);
  CHECK_THROWS_AS(parse_int_list("1.5"), UsageError);
  CHECK_THROWS_AS(parse_double_list("x"), UsageError);
  CHECK_THROWS_AS((SweepGrid{{0}, {0.1}, {1}}.validate()), UsageError);
}
