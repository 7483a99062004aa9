#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pnr/data.hpp"
#include "pnr/sampler.hpp"

namespace pnr {

struct SweepGrid {
  std::vector<int> steps{10, 20, 30, 50, 100, 200, 300, 500};
  std::vector<double> var_ends{0.01, 0.02, 0.05, 0.1, 0.2, 0.5};
  std::vector<int> n_avg{1, 2, 4, 8};

  void validate() const;
};

struct SweepRow {
  int steps = 0;
  double var_end = 0.0;
  int n_avg = 0;
  double psnr_mean = 0.0;
  double ssim_mean = 0.0;
  double pixel_std_mean = 0.0;
  long long wall_ms = 0;
};

struct SweepOptions {
  std::uint64_t seed = 0;
  bool timing = false;  // off: wall_ms is 0 so the CSV is reproducible
  std::function<void(const SweepRow&)> on_row;
};

// Rows come out in grid order (steps, then var_end, then n_avg). Within a
// (steps, var_end) cell every image is sampled max(2, max n_avg) times once;
// the n_avg row averages the first n_avg of those samples, and pixel_std_mean
// is the per-pixel std over the whole set, shared by the cell's rows.
std::vector<SweepRow> pd_sweep(RestorationModel& model, std::span<const data::ImagePair> eval,
                               const SweepGrid& grid, const SweepOptions& options = {});

std::string sweep_csv(std::span<const SweepRow> rows);
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

std::vector<int> parse_int_list(const std::string& text);
std::vector<double> parse_double_list(const std::string& text);

}  // namespace pnr
