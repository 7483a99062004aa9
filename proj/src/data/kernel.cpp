#include <cmath>
#include <numbers>
#include <numeric>

#include "pnr/data.hpp"
#include "pnr/io.hpp"

namespace pnr::data {

void BlurKernel::validate(int max_support) const {
  if (size < 1 || size % 2 == 0) throw UsageError("blur kernel size must be odd");
  if (size > max_support) throw UsageError("blur kernel exceeds the maximum support");
  if (weights.size() != static_cast<std::size_t>(size) * size) throw UsageError("blur kernel weight count mismatch");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw UsageError("blur kernel has a negative or NaN weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw UsageError("blur kernel does not sum to 1");
}

KernelConfig KernelConfig::gaussian_dominant() {
  KernelConfig c;
  c.min_length = 0.0;
  c.max_length = 4.0;
  c.min_smooth = 0.3;
  c.max_smooth = 2.2;
  c.p_delta = 0.05;
  return c;
}

void KernelConfig::validate() const {
  if (max_support < 1 || max_support % 2 == 0 || max_support > 31)
    throw UsageError("kernel support must be an odd number in 1..31");
  if (min_length < 0.0 || max_length < min_length) throw UsageError("bad kernel length range");
  if (min_smooth < 0.0 || max_smooth < min_smooth) throw UsageError("bad kernel smoothing range");
  if (walk_steps < 1) throw UsageError("kernel walk needs at least one step");
  if (p_delta < 0.0 || p_delta > 1.0) throw UsageError("p_delta must lie in [0, 1]");
}

namespace {

std::vector<double> gaussian_taps(double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> taps(2 * r + 1);
  for (int i = -r; i <= r; ++i) taps[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double s = std::accumulate(taps.begin(), taps.end(), 0.0);
  for (double& t : taps) t /= s;
  return taps;
}

// Separable smoothing on an n x n grid with zero outside.
void smooth_grid(std::vector<double>& grid, int n, double sigma) {
  if (sigma <= 0.0) return;
  const auto taps = gaussian_taps(sigma);
  const int r = static_cast<int>(taps.size()) / 2;
  std::vector<double> tmp(grid.size(), 0.0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        if (xx >= 0 && xx < n) acc += taps[k + r] * grid[y * n + xx];
      }
      tmp[y * n + x] = acc;
    }
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        if (yy >= 0 && yy < n) acc += taps[k + r] * tmp[yy * n + x];
      }
      grid[y * n + x] = acc;
    }
}

}  // namespace

BlurKernel kernel_from_trajectory(std::span<const Point> points, double smooth_sigma, int max_support) {
  if (points.empty()) throw UsageError("kernel trajectory is empty");
  const int n = max_support;
  const int c = n / 2;
  // Keep the splat plus most of the smoothing footprint inside the grid.
  const double limit = std::max(0.0, c - 1.0 - 2.0 * smooth_sigma);
  double extent = 0.0;
  for (const Point& p : points) extent = std::max({extent, std::abs(p.x), std::abs(p.y)});
  const double scale = extent > limit && extent > 0.0 ? limit / extent : 1.0;

  std::vector<double> grid(static_cast<std::size_t>(n) * n, 0.0);
  const double w = 1.0 / static_cast<double>(points.size());
  for (const Point& p : points) {
    const double gx = c + p.x * scale;
    const double gy = c + p.y * scale;
    const int x0 = static_cast<int>(std::floor(gx));
    const int y0 = static_cast<int>(std::floor(gy));
    const double fx = gx - x0;
    const double fy = gy - y0;
    const auto splat = [&](int yy, int xx, double v) {
      if (v > 0.0 && yy >= 0 && yy < n && xx >= 0 && xx < n) grid[yy * n + xx] += v;
    };
    splat(y0, x0, w * (1 - fx) * (1 - fy));
    splat(y0, x0 + 1, w * fx * (1 - fy));
    splat(y0 + 1, x0, w * (1 - fx) * fy);
    splat(y0 + 1, x0 + 1, w * fx * fy);
  }
  smooth_grid(grid, n, smooth_sigma);

  // Drop the negligible tail and trim to the smallest centered odd square.
  const double peak = *std::max_element(grid.begin(), grid.end());
  int radius = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double& v = grid[y * n + x];
      if (v < 1e-4 * peak) {
        v = 0.0;
      } else {
        radius = std::max({radius, std::abs(y - c), std::abs(x - c)});
      }
    }
  BlurKernel k;
  k.size = 2 * radius + 1;
  k.weights.assign(static_cast<std::size_t>(k.size) * k.size, 0.0);
  double sum = 0.0;
  for (int y = 0; y < k.size; ++y)
    for (int x = 0; x < k.size; ++x) {
      const double v = grid[(c - radius + y) * n + (c - radius + x)];
      k.weights[y * k.size + x] = v;
      sum += v;
    }
  for (double& v : k.weights) v /= sum;
  return k;
}

BlurKernel gen_kernel(const KernelConfig& cfg, Rng& rng) {
  cfg.validate();
  if (rng.bernoulli(cfg.p_delta)) {
    const Point origin{};
    return kernel_from_trajectory(std::span(&origin, 1), rng.uniform(0.0, 0.5), cfg.max_support);
  }
  const double length = rng.uniform(cfg.min_length, cfg.max_length);
  const double sigma = rng.uniform(cfg.min_smooth, cfg.max_smooth);
  const double step = length / cfg.walk_steps;
  double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<Point> pts(static_cast<std::size_t>(cfg.walk_steps) + 1);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    heading += cfg.jitter * rng.normal();
    pts[i].x = pts[i - 1].x + step * std::cos(heading);
    pts[i].y = pts[i - 1].y + step * std::sin(heading);
  }
  Point mean{};
  for (const Point& p : pts) {
    mean.x += p.x;
    mean.y += p.y;
  }
  mean.x /= static_cast<double>(pts.size());
  mean.y /= static_cast<double>(pts.size());
  for (Point& p : pts) {
    p.x -= mean.x;
    p.y -= mean.y;
  }
  return kernel_from_trajectory(pts, sigma, cfg.max_support);
}

double kernel_spread(const BlurKernel& k) {
  double mx = 0.0, my = 0.0;
  for (int y = 0; y < k.size; ++y)
    for (int x = 0; x < k.size; ++x) {
      mx += k.at(y, x) * x;
      my += k.at(y, x) * y;
    }
  double var = 0.0;
  for (int y = 0; y < k.size; ++y)
    for (int x = 0; x < k.size; ++x) var += k.at(y, x) * ((x - mx) * (x - mx) + (y - my) * (y - my));
  return std::sqrt(var);
}

ImageTensor apply_blur(const ImageTensor& sharp, const BlurKernel& k) {
  const Shape& s = sharp.shape();
  const int r = k.radius();
  ImageTensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          double acc = 0.0;
          for (int i = 0; i < k.size; ++i) {
            const int yy = reflect_index(y - (i - r), s.h);
            for (int j = 0; j < k.size; ++j) {
              const double wgt = k.at(i, j);
              if (wgt == 0.0) continue;
              acc += wgt * sharp.at(n, c, yy, reflect_index(x - (j - r), s.w));
            }
          }
          out.at(n, c, y, x) = static_cast<float>(acc);
        }
  return out;
}

ImageTensor add_noise(const ImageTensor& img, double sigma_8bit, Rng& rng) {
  if (sigma_8bit < 0.0) throw UsageError("noise sigma must be non-negative");
  ImageTensor out = img;
  if (sigma_8bit == 0.0) return out;
  const double sd = sigma_8bit * 2.0 / 255.0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(out[i] + sd * rng.normal());
  return out;
}

void write_kernel_pgm(const std::filesystem::path& path, const BlurKernel& k) {
  const double peak = *std::max_element(k.weights.begin(), k.weights.end());
  const std::string header = "P5\n" + std::to_string(k.size) + " " + std::to_string(k.size) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (double w : k.weights) bytes.push_back(static_cast<std::uint8_t>(std::lround(255.0 * w / peak)));
  io::atomic_write(path, bytes);
}

BlurKernel read_kernel_pgm(const std::filesystem::path& path) {
  const ImageTensor img = read_ppm(path);
  if (img.shape().c != 1 || img.shape().h != img.shape().w || img.shape().h % 2 == 0)
    throw IoError(path.string() + ": kernel must be an odd square gray image");
  BlurKernel k;
  k.size = img.shape().h;
  k.weights.resize(img.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    k.weights[i] = static_cast<double>(to_u8(img[i]));
    sum += k.weights[i];
  }
  if (sum <= 0.0) throw IoError(path.string() + ": kernel has no mass");
  for (double& w : k.weights) w /= sum;
  return k;
}

}  // namespace pnr::data
