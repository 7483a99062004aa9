#include <cmath>
#include <numeric>

#include "doctest.h"
#include "pnr/data.hpp"
#include "pnr/io.hpp"
#include "support.hpp"

using namespace pnr;
using namespace pnr::data;

TEST_CASE("zero-length trajectory is the delta kernel") {
  const Point origin{0.0, 0.0};
  const auto k = kernel_from_trajectory(std::span(&origin, 1), 0.0, 31);
  CHECK(k.size == 1);
  CHECK(k.weights == std::vector<double>{1.0});
  KernelConfig c;
  c.min_length = c.max_length = 0.0;
  c.min_smooth = c.max_smooth = 0.0;
  c.p_delta = 0.0;
  pnr::Rng rng(1);
  CHECK(gen_kernel(c, rng).size == 1);
}

TEST_CASE("kernels are normalized, non-negative and bounded") {
  pnr::Rng rng(2);
  for (const auto& cfg : {KernelConfig{}, KernelConfig::gaussian_dominant()}) {
    for (int i = 0; i < 1000; ++i) {
      const auto k = gen_kernel(cfg, rng);
      CHECK(k.size % 2 == 1);
      CHECK(k.size <= 31);
      double sum = 0.0;
      for (double w : k.weights) {
        CHECK(w >= 0.0);
        sum += w;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("kernel spread grows with the walk length") {
  double last = -1.0;
  for (double len : {0.0, 3.0, 8.0, 14.0, 22.0}) {
    KernelConfig c;
    c.min_length = c.max_length = len;
    c.p_delta = 0.0;
    pnr::Rng rng(3);
    double total = 0.0;
    for (int i = 0; i < 200; ++i) total += kernel_spread(gen_kernel(c, rng));
    const double mean = total / 200;
    CHECK(mean > last);
    last = mean;
  }
}

TEST_CASE("blur by hand") {
  pnr::Rng rng(4);
  const auto img = testing::random_image(Shape{1, 3, 9, 7}, rng);
  CHECK(apply_blur(img, BlurKernel::delta()).vec() == img.vec());

  const ImageTensor flat(Shape{1, 1, 8, 8}, 0.3f);
  KernelConfig c;
  const auto k = gen_kernel(c, rng);
  const auto blurred = apply_blur(flat, k);
  for (float v : blurred.span()) CHECK(v == doctest::Approx(0.3f).epsilon(1e-6));

  BlurKernel box{3, std::vector<double>(9, 1.0 / 9.0)};
  ImageTensor one(Shape{1, 1, 7, 7}, 0.0f);
  one.at(0, 0, 3, 3) = 1.0f;
  const auto out = apply_blur(one, box);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 7; ++x) {
      const bool covered = std::abs(y - 3) <= 1 && std::abs(x - 3) <= 1;
      CHECK(out.at(0, 0, y, x) == doctest::Approx(covered ? 1.0 / 9.0 : 0.0));
    }
}

TEST_CASE("blur mean on a natural image") {
  // Reflect boundaries keep constants exact. A generic image drifts at the
  // border; only the interior mass is conserved.
  pnr::Rng rng(5);
  const auto img = render_procedural(32, 32, 1, rng);
  const BlurKernel box{3, std::vector<double>(9, 1.0 / 9.0)};
  const auto out = apply_blur(img, box);
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    a += img[i];
    b += out[i];
  }
  CHECK(std::abs(a - b) / img.size() < 0.05);
}

TEST_CASE("noise") {
  const ImageTensor img(Shape{1, 1, 1000, 1000}, 0.1f);
  pnr::Rng a(7), b(7);
  CHECK(add_noise(img, 0.0, a).vec() == img.vec());
  const auto n1 = add_noise(img, 9.0, a);
  add_noise(img, 0.0, b);
  CHECK(add_noise(img, 9.0, b).vec() == n1.vec());
  double s = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double d = n1[i] - img[i];
    s += d;
    sq += d * d;
  }
  const double n = static_cast<double>(img.size());
  const double sd = std::sqrt(sq / n - (s / n) * (s / n));
  CHECK(std::abs(sd - 9.0 * 2.0 / 255.0) / (9.0 * 2.0 / 255.0) < 0.01);
}

TEST_CASE("PPM and PGM") {
  testing::TempDir dir("ppm");
  pnr::Rng rng(8);
  for (int c : {1, 3}) {
    const auto img = testing::random_image(Shape{1, c, 5, 6}, rng);
    write_ppm(dir / "a.ppm", img);
    const auto back = read_ppm(dir / "a.ppm");
    CHECK(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back[i] - img[i]) <= 1.0 / 127.5 + 1e-6);
    // a second round trip is exact
    CHECK(encode_ppm(back) == encode_ppm(read_ppm(dir / "a.ppm")));
  }
  const ImageTensor black(Shape{1, 3, 2, 2}, -1.0f);
  const auto bytes = encode_ppm(black);
  const std::string header = "P6\n2 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 12);
  CHECK(std::string(bytes.begin(), bytes.begin() + header.size()) == header);
  for (std::size_t i = header.size(); i < bytes.size(); ++i) CHECK(bytes[i] == 0);

  auto bad = bytes;
  bad[1] = '3';
  CHECK_THROWS_AS(decode_ppm(bad), IoError);
  CHECK_THROWS_AS(decode_ppm(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 3)), IoError);
  CHECK_THROWS_AS(read_ppm(dir / "missing.ppm"), IoError);
  CHECK(to_u8(-1.0f) == 0);
  CHECK(to_u8(1.0f) == 255);
  CHECK(to_u8(5.0f) == 255);
  CHECK(from_u8(255) == 1.0f);
}

TEST_CASE("kernel PGM round trip") {
  testing::TempDir dir("kpgm");
  pnr::Rng rng(9);
  const auto k = gen_kernel(KernelConfig{}, rng);
  write_kernel_pgm(dir / "k.pgm", k);
  const auto back = read_kernel_pgm(dir / "k.pgm");
  CHECK(back.size == k.size);
  CHECK(std::accumulate(back.weights.begin(), back.weights.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("empty dataset") {
  testing::TempDir dir("ds0");
  DatasetConfig cfg;
  cfg.count = 0;
  const auto m = make_dataset(cfg, dir.path());
  CHECK(m.pairs.empty());
  CHECK(load_manifest(dir.path()).pairs.empty());
}

TEST_CASE("datasets are reproducible and self-consistent") {
  testing::TempDir a("dsa"), b("dsb");
  DatasetConfig cfg;
  cfg.count = 5;
  cfg.height = 24;
  cfg.width = 20;
  cfg.kernel.max_support = 19;
  cfg.seed = 10;
  make_dataset(cfg, a.path());
  make_dataset(cfg, b.path());
  CHECK(testing::same_tree(a.path(), b.path()));

  const auto m = load_manifest(a.path());
  REQUIRE(m.pairs.size() == 5);
  CHECK(m.height == 24);
  for (const auto& p : m.pairs) {
    const auto s = read_ppm(a.path() / p.sharp_path);
    const auto y = read_ppm(a.path() / p.blurry_path);
    CHECK(s.shape() == y.shape());
    CHECK(s.shape() == Shape{1, 1, 24, 20});
    CHECK(p.sigma >= 0.0);
    CHECK(p.sigma <= 15.0);
    p.kernel.validate(19);
  }
  CHECK(load_pairs(a.path()).size() == 5);
  CHECK(load_pairs(a.path() / "manifest.json").size() == 5);

  // a pair depends only on (config, index)
  const auto g = generate_pair(cfg, 3);
  const auto y = read_ppm(a.path() / m.pairs[3].blurry_path);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - g.blurry[i]) <= 1.0 / 127.5 + 1e-6);
}

TEST_CASE("dataset validation") {
  DatasetConfig cfg;
  cfg.count = 1;
  cfg.height = cfg.width = 7;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  testing::TempDir dir("bad");
  io::atomic_write(dir / "manifest.json", std::string("{nope"));
  CHECK_THROWS_AS(load_manifest(dir.path()), IoError);
  CHECK_THROWS_AS(load_manifest(dir / "missing"), IoError);
}

TEST_CASE("procedural sources stay in range") {
  pnr::Rng rng(11);
  for (int c : {1, 3}) {
    const auto img = render_procedural(32, 40, c, rng);
    CHECK(img.shape() == Shape{1, c, 32, 40});
    for (float v : img.span()) {
      CHECK(v >= -1.0f);
      CHECK(v <= 1.0f);
    }
  }
}
