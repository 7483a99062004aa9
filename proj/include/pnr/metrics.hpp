#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "pnr/tensor.hpp"

namespace pnr::metrics {

inline constexpr double kPsnrCap = 100.0;

double mse(const ImageTensor& pred, const ImageTensor& ref);
// 10 log10(range^2 / mse), capped at 100 dB.
double psnr(const ImageTensor& pred, const ImageTensor& ref, double data_range = 2.0);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 2.0;
};
// Gaussian-window SSIM over all fully-contained windows, averaged per channel
// then over channels and batch items. Images smaller than the window use the
// largest odd window that fits.
double ssim(const ImageTensor& pred, const ImageTensor& ref, const SsimOptions& opt = {});

// Shannon entropy (bits) of a 256-bin histogram spanning the observed range of
// all values in all images. Constant data has entropy 0.
double entropy_bpd(std::span<const ImageTensor> images);

// 5-point Laplacian with reflect boundary.
ImageTensor laplacian(const ImageTensor& img);

struct DiversityStats {
  double sharpness = 0.0;  // |lap(input)| / |lap(ref)|
  double diversity = 0.0;  // |var(samples)| / |lap(ref)|
  ImageTensor std_map;     // per-pixel std of the samples
};
// Needs at least two samples. Ratios are NaN when the reference has a zero Laplacian.
DiversityStats diversity_stats(const ImageTensor& input, const ImageTensor& ref,
                               std::span<const ImageTensor> samples);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

struct MetricSummary {
  std::vector<double> per_image;
  double mean = 0.0;
  double std = 0.0;  // population
};
MetricSummary summarize(std::vector<double> values);

using MetricReport = std::map<std::string, MetricSummary>;
// {metric: {per_image: [...], mean, std}}
std::string report_to_json(const MetricReport& report);

// Per-pixel std as a gray heatmap: 0 -> black, max(std) -> white.
void write_std_map_pgm(const std::string& path, const ImageTensor& std_map);

}  // namespace pnr::metrics
