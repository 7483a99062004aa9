#include "pnr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "pnr/io.hpp"

namespace pnr::metrics {

double mse(const ImageTensor& pred, const ImageTensor& ref) {
  require_same_shape(pred.shape(), ref.shape(), "mse");
  std::vector<double> sq(pred.size());
  for (std::size_t i = 0; i < sq.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - ref[i];
    sq[i] = d * d;
  }
  return pairwise_sum(std::span<const double>(sq)) / static_cast<double>(sq.size());
}

double psnr(const ImageTensor& pred, const ImageTensor& ref, double data_range) {
  const double m = mse(pred, ref);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / m));
}

namespace {

// Valid-mode separable filtering of one plane.
std::vector<double> filter_valid(const std::vector<double>& in, int h, int w, const std::vector<double>& g) {
  const int k = static_cast<int>(g.size());
  const int ow = w - k + 1, oh = h - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[i] * in[y * w + x + i];
      tmp[y * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(size);
  const int r = size / 2;
  for (int i = 0; i < size; ++i) g[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
  const double s = std::accumulate(g.begin(), g.end(), 0.0);
  for (double& v : g) v /= s;
  return g;
}

}  // namespace

double ssim(const ImageTensor& pred, const ImageTensor& ref, const SsimOptions& opt) {
  require_same_shape(pred.shape(), ref.shape(), "ssim");
  if (opt.window < 1 || opt.window % 2 == 0) throw UsageError("ssim window must be odd");
  const Shape& s = pred.shape();
  int win = std::min(opt.window, std::min(s.h, s.w));
  if (win % 2 == 0) --win;
  const auto g = gaussian_window(win, opt.sigma);
  const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
  const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);

  double total = 0.0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const auto px = pred.plane(n, c);
      const auto rx = ref.plane(n, c);
      std::vector<double> a(px.begin(), px.end()), b(rx.begin(), rx.end());
      std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
      }
      const auto ma = filter_valid(a, s.h, s.w, g);
      const auto mb = filter_valid(b, s.h, s.w, g);
      const auto maa = filter_valid(aa, s.h, s.w, g);
      const auto mbb = filter_valid(bb, s.h, s.w, g);
      const auto mab = filter_valid(ab, s.h, s.w, g);
      double acc = 0.0;
      for (std::size_t i = 0; i < ma.size(); ++i) {
        const double va = maa[i] - ma[i] * ma[i];
        const double vb = mbb[i] - mb[i] * mb[i];
        const double cov = mab[i] - ma[i] * mb[i];
        acc += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) / ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
      }
      total += acc / static_cast<double>(ma.size());
    }
  return total / (static_cast<double>(s.n) * s.c);
}

double entropy_bpd(std::span<const ImageTensor> images) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t count = 0;
  for (const auto& img : images)
    for (float v : img.span()) {
      if (!std::isfinite(v)) throw NumericError("entropy_bpd: non-finite value");
      lo = std::min(lo, static_cast<double>(v));
      hi = std::max(hi, static_cast<double>(v));
      ++count;
    }
  if (count == 0) throw UsageError("entropy_bpd: no values");
  if (hi <= lo) return 0.0;
  std::vector<std::size_t> hist(256, 0);
  const double scale = 256.0 / (hi - lo);
  for (const auto& img : images)
    for (float v : img.span()) {
      const int bin = std::min(255, static_cast<int>((v - lo) * scale));
      ++hist[static_cast<std::size_t>(bin)];
    }
  double h = 0.0;
  for (std::size_t c : hist)
    if (c > 0) {
      const double p = static_cast<double>(c) / static_cast<double>(count);
      h -= p * std::log2(p);
    }
  return h;
}

ImageTensor laplacian(const ImageTensor& img) {
  const Shape& s = img.shape();
  ImageTensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const double v = img.at(n, c, reflect_index(y - 1, s.h), x) + img.at(n, c, reflect_index(y + 1, s.h), x) +
                           img.at(n, c, y, reflect_index(x - 1, s.w)) + img.at(n, c, y, reflect_index(x + 1, s.w)) -
                           4.0 * img.at(n, c, y, x);
          out.at(n, c, y, x) = static_cast<float>(v);
        }
  return out;
}

namespace {

double frobenius(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

DiversityStats diversity_stats(const ImageTensor& input, const ImageTensor& ref,
                               std::span<const ImageTensor> samples) {
  require_same_shape(input.shape(), ref.shape(), "diversity_stats");
  if (samples.size() < 2) throw UsageError("diversity_stats needs at least two samples");
  for (const auto& s : samples) require_same_shape(s.shape(), ref.shape(), "diversity_stats");

  const double ref_norm = frobenius(laplacian(ref).span());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  DiversityStats out;
  out.sharpness = ref_norm > 0.0 ? frobenius(laplacian(input).span()) / ref_norm : nan;

  const std::size_t m = samples.size();
  ImageTensor var(ref.shape());
  out.std_map = ImageTensor(ref.shape());
  for (std::size_t i = 0; i < var.size(); ++i) {
    double mean = 0.0;
    for (const auto& s : samples) mean += s[i];
    mean /= static_cast<double>(m);
    double ss = 0.0;
    for (const auto& s : samples) ss += (s[i] - mean) * (s[i] - mean);
    const double v = ss / static_cast<double>(m - 1);
    var[i] = static_cast<float>(v);
    out.std_map[i] = static_cast<float>(std::sqrt(v));
  }
  out.diversity = ref_norm > 0.0 ? frobenius(var.span()) / ref_norm : nan;
  return out;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw UsageError("spearman needs two equal-length series of length >= 2");
  return pearson(ranks(a), ranks(b));
}

MetricSummary summarize(std::vector<double> values) {
  MetricSummary s;
  s.per_image = std::move(values);
  if (s.per_image.empty()) return s;
  const double n = static_cast<double>(s.per_image.size());
  s.mean = pairwise_sum(std::span<const double>(s.per_image)) / n;
  double ss = 0.0;
  for (double v : s.per_image) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / n);
  return s;
}

std::string report_to_json(const MetricReport& report) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [name, s] : report) j[name] = {{"per_image", s.per_image}, {"mean", s.mean}, {"std", s.std}};
  return j.dump(2) + "\n";
}

void write_std_map_pgm(const std::string& path, const ImageTensor& std_map) {
  const Shape& s = std_map.shape();
  if (s.n != 1) throw UsageError("std map must be a single image");
  float peak = 0.0f;
  for (float v : std_map.span()) peak = std::max(peak, v);
  // channels are averaged into one gray plane
  const std::string header = "P5\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      double v = 0.0;
      for (int c = 0; c < s.c; ++c) v += std_map.at(0, c, y, x);
      v /= s.c;
      bytes.push_back(peak > 0.0f ? static_cast<std::uint8_t>(std::lround(255.0 * v / peak)) : 0);
    }
  io::atomic_write(path, bytes);
}

}  // namespace pnr::metrics
