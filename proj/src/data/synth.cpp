#include <algorithm>
#include <cmath>
#include <numbers>

#include "pnr/data.hpp"

namespace pnr::data {
namespace {

constexpr int kSupersample = 4;

struct Color {
  double v[3] = {0.0, 0.0, 0.0};
};

Color random_color(int channels, Rng& rng) {
  Color c;
  const double base = rng.uniform(-0.9, 0.9);
  for (int i = 0; i < channels; ++i) c.v[i] = std::clamp(base + (channels > 1 ? rng.uniform(-0.3, 0.3) : 0.0), -1.0, 1.0);
  return c;
}

struct Polygon {
  std::vector<Point> vertices;
  Color color;

  // even-odd rule
  bool contains(double x, double y) const {
    bool inside = false;
    for (std::size_t i = 0, j = vertices.size() - 1; i < vertices.size(); j = i++) {
      const Point& a = vertices[i];
      const Point& b = vertices[j];
      if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) inside = !inside;
    }
    return inside;
  }
};

struct Stroke {
  std::vector<Point> path;
  double half_width = 0.5;
  Color color;

  bool contains(double x, double y) const {
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      const Point& a = path[i];
      const Point& b = path[i + 1];
      const double dx = b.x - a.x, dy = b.y - a.y;
      const double len2 = dx * dx + dy * dy;
      double t = len2 > 0.0 ? ((x - a.x) * dx + (y - a.y) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double ex = a.x + t * dx - x, ey = a.y + t * dy - y;
      if (ex * ex + ey * ey <= half_width * half_width) return true;
    }
    return false;
  }
};

}  // namespace

ImageTensor render_procedural(int height, int width, int channels, Rng& rng) {
  if (height < 1 || width < 1 || (channels != 1 && channels != 3))
    throw UsageError("procedural images need positive size and 1 or 3 channels");
  const double size = std::max(height, width);

  // background: linear ramp between two colors
  const Color c0 = random_color(channels, rng);
  const Color c1 = random_color(channels, rng);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ux = std::cos(angle), uy = std::sin(angle);

  std::vector<Polygon> polys(2 + rng.below(4));
  for (auto& p : polys) {
    const double cx = rng.uniform(0.0, width), cy = rng.uniform(0.0, height);
    const double r = rng.uniform(0.12, 0.4) * size;
    const int k = 3 + static_cast<int>(rng.below(4));
    std::vector<double> angles(static_cast<std::size_t>(k));
    for (auto& a : angles) a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    for (double a : angles) {
      const double rr = r * rng.uniform(0.5, 1.0);
      p.vertices.push_back({cx + rr * std::cos(a), cy + rr * std::sin(a)});
    }
    p.color = random_color(channels, rng);
  }
  std::vector<Stroke> strokes(1 + rng.below(3));
  for (auto& s : strokes) {
    Point cur{rng.uniform(0.0, width), rng.uniform(0.0, height)};
    s.path.push_back(cur);
    const int segs = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < segs; ++i) {
      const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double len = rng.uniform(0.15, 0.45) * size;
      cur = {cur.x + len * std::cos(a), cur.y + len * std::sin(a)};
      s.path.push_back(cur);
    }
    s.half_width = rng.uniform(0.4, 1.2);
    s.color = random_color(channels, rng);
  }

  ImageTensor img(Shape{1, channels, height, width});
  const double inv = 1.0 / (kSupersample * kSupersample);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc[3] = {0.0, 0.0, 0.0};
      for (int sy = 0; sy < kSupersample; ++sy)
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double px = x + (sx + 0.5) / kSupersample;
          const double py = y + (sy + 0.5) / kSupersample;
          const double t = std::clamp(0.5 + ((px - 0.5 * width) * ux + (py - 0.5 * height) * uy) / size, 0.0, 1.0);
          Color c;
          for (int ch = 0; ch < channels; ++ch) c.v[ch] = (1 - t) * c0.v[ch] + t * c1.v[ch];
          for (const auto& p : polys)
            if (p.contains(px, py)) c = p.color;
          for (const auto& s : strokes)
            if (s.contains(px, py)) c = s.color;
          for (int ch = 0; ch < channels; ++ch) acc[ch] += c.v[ch];
        }
      for (int ch = 0; ch < channels; ++ch) img.at(0, ch, y, x) = static_cast<float>(acc[ch] * inv);
    }
  return img;
}

}  // namespace pnr::data
