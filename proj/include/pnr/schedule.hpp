#pragma once

#include <vector>

#include "pnr/rng.hpp"

namespace pnr {

// Discrete variance-preserving noise schedule. alphas[t-1] holds alpha_t for
// t = 1..T; alphabars[t] holds the running product with alphabars[0] = 1.
struct NoiseSchedule {
  std::vector<double> alphas;
  std::vector<double> alphabars;
  double var_start = 0.0;
  double var_end = 0.0;

  int steps() const { return static_cast<int>(alphas.size()); }
  double alpha(int t) const { return alphas.at(static_cast<std::size_t>(t) - 1); }
  double alphabar(int t) const { return alphabars.at(static_cast<std::size_t>(t)); }
};

// Per-step variance 1 - alpha_t interpolated linearly from var_start (t = 1)
// to var_end (t = T). A single-step schedule uses var_end.
NoiseSchedule build_linear_schedule(int steps, double var_start, double var_end);

// Inference schedules pin the first variance at 1e-6.
inline constexpr double kInferenceVarStart = 1e-6;
NoiseSchedule build_inference_schedule(int steps, double var_end);

// Gaussian q(x_{t-1} | x_t, x_0): mean = coef_x0 * x0 + coef_xt * xt, variance beta.
struct PosteriorCoeffs {
  double coef_x0 = 0.0;
  double coef_xt = 0.0;
  double beta = 0.0;
};
PosteriorCoeffs posterior_coeffs(const NoiseSchedule& s, int t);

// Boundaries of the continuous-level intervals in sqrt(alphabar) units:
// bounds[0] = 1, bounds[i] = sqrt(alphabar_i). Strictly decreasing.
struct LevelIntervals {
  std::vector<double> bounds;

  explicit LevelIntervals(const NoiseSchedule& s);
  int count() const { return static_cast<int>(bounds.size()) - 1; }
};

// Picks an interval k uniformly from 1..T, then a value uniformly in
// [bounds[k], bounds[k-1]]. Returns a sqrt(alphabar) noise level.
double sample_continuous_level(const LevelIntervals& iv, Rng& rng);

// The same draw with the randomness supplied: k in 1..T, u in [0, 1].
double level_from_draw(const LevelIntervals& iv, int k, double u);

}  // namespace pnr
