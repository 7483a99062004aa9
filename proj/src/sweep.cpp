#include "pnr/sweep.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "pnr/io.hpp"
#include "pnr/metrics.hpp"

namespace pnr {

void SweepGrid::validate() const {
  if (steps.empty() || var_ends.empty() || n_avg.empty()) throw UsageError("sweep grids must be non-empty");
  for (int t : steps)
    if (t < 1) throw UsageError("sweep step counts must be positive");
  for (double v : var_ends)
    if (!(v >= kInferenceVarStart && v < 1.0)) throw UsageError("sweep final variances must lie in [1e-6, 1)");
  for (int n : n_avg)
    if (n < 1) throw UsageError("sweep n_avg values must be positive");
}

std::vector<SweepRow> pd_sweep(RestorationModel& model, std::span<const data::ImagePair> eval, const SweepGrid& grid,
                               const SweepOptions& options) {
  grid.validate();
  if (eval.empty()) throw UsageError("sweep evaluation set is empty");
  const int n_draw = std::max(2, *std::max_element(grid.n_avg.begin(), grid.n_avg.end()));

  // x_init does not depend on the schedule.
  std::vector<ImageTensor> x_inits;
  for (const auto& p : eval) x_inits.push_back(model.predict(p.blurry));

  std::vector<SweepRow> rows;
  for (int steps : grid.steps)
    for (double var_end : grid.var_ends) {
      const auto start = std::chrono::steady_clock::now();
      const NoiseSchedule s = build_inference_schedule(steps, var_end);
      std::vector<std::vector<double>> psnr(grid.n_avg.size()), ssim(grid.n_avg.size());
      std::vector<double> stds;
      for (std::size_t img = 0; img < eval.size(); ++img) {
        const ImageTensor z = sample_residuals(model, eval[img].blurry, s, options.seed, img, 0, n_draw);
        std::vector<ImageTensor> samples;
        for (int i = 0; i < n_draw; ++i) {
          ImageTensor r = batch_item(z, i);
          for (std::size_t k = 0; k < r.size(); ++k) r[k] += x_inits[img][k];
          samples.push_back(clamp_unit(r));
        }
        for (std::size_t a = 0; a < grid.n_avg.size(); ++a) {
          const auto first = std::span<const ImageTensor>(samples).first(static_cast<std::size_t>(grid.n_avg[a]));
          const ImageTensor avg = clamp_unit(mean_of(first));
          psnr[a].push_back(metrics::psnr(avg, eval[img].sharp));
          ssim[a].push_back(metrics::ssim(avg, eval[img].sharp));
        }
        const auto d = metrics::diversity_stats(eval[img].blurry, eval[img].sharp, samples);
        stds.push_back(metrics::summarize(std::vector<double>(d.std_map.span().begin(), d.std_map.span().end())).mean);
      }
      long long ms = 0;
      if (options.timing)
        ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
      const double std_mean = metrics::summarize(stds).mean;
      for (std::size_t a = 0; a < grid.n_avg.size(); ++a) {
        SweepRow row{steps, var_end, grid.n_avg[a], metrics::summarize(psnr[a]).mean, metrics::summarize(ssim[a]).mean,
                     std_mean, ms};
        if (options.on_row) options.on_row(row);
        rows.push_back(row);
      }
    }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << "T,var_end,n_avg,psnr_mean,ssim_mean,pixel_std_mean,wall_ms\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%d,%.9g,%d,%.9g,%.9g,%.9g,%lld\n", r.steps, r.var_end, r.n_avg, r.psnr_mean,
                  r.ssim_mean, r.pixel_std_mean, r.wall_ms);
    out << line;
  }
  return out.str();
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  io::atomic_write(path, sweep_csv(rows));
}

namespace {

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw UsageError("empty entry in list '" + text + "'");
    parts.push_back(item.substr(b, e - b + 1));
  }
  if (parts.empty()) throw UsageError("empty list");
  return parts;
}

}  // namespace

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (const auto& p : split_csv(text)) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(p, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != p.size() || used == 0) throw UsageError("not an integer: '" + p + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& p : split_csv(text)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(p, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != p.size() || used == 0) throw UsageError("not a number: '" + p + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace pnr
