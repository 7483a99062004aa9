#include "pnr/schedule.hpp"

#include <cmath>
#include <string>

#include "pnr/error.hpp"

namespace pnr {

NoiseSchedule build_linear_schedule(int steps, double var_start, double var_end) {
  if (steps < 1) throw UsageError("schedule needs at least one step, got " + std::to_string(steps));
  auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!in_unit(var_start) || !in_unit(var_end))
    throw UsageError("schedule variances must lie in (0, 1)");
  if (var_start > var_end) throw UsageError("schedule var_start must not exceed var_end");

  NoiseSchedule s;
  s.var_start = var_start;
  s.var_end = var_end;
  s.alphas.resize(steps);
  s.alphabars.resize(steps + 1);
  s.alphabars[0] = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double var =
        steps == 1 ? var_end : var_start + (var_end - var_start) * (t - 1) / static_cast<double>(steps - 1);
    s.alphas[t - 1] = 1.0 - var;
    s.alphabars[t] = s.alphabars[t - 1] * s.alphas[t - 1];
  }
  return s;
}

NoiseSchedule build_inference_schedule(int steps, double var_end) {
  return build_linear_schedule(steps, kInferenceVarStart, var_end);
}

PosteriorCoeffs posterior_coeffs(const NoiseSchedule& s, int t) {
  if (t < 1 || t > s.steps())
    throw UsageError("posterior step " + std::to_string(t) + " outside 1.." + std::to_string(s.steps()));
  const double a = s.alpha(t);
  const double ab = s.alphabar(t);
  const double ab_prev = s.alphabar(t - 1);
  const double denom = 1.0 - ab;
  PosteriorCoeffs c;
  c.coef_x0 = std::sqrt(ab_prev) * (1.0 - a) / denom;
  c.coef_xt = std::sqrt(a) * (1.0 - ab_prev) / denom;
  c.beta = (1.0 - ab_prev) * (1.0 - a) / denom;
  return c;
}

LevelIntervals::LevelIntervals(const NoiseSchedule& s) {
  bounds.resize(s.alphabars.size());
  bounds[0] = 1.0;
  for (std::size_t i = 1; i < bounds.size(); ++i) bounds[i] = std::sqrt(s.alphabars[i]);
}

double level_from_draw(const LevelIntervals& iv, int k, double u) {
  if (k < 1 || k > iv.count()) throw UsageError("level interval index out of range");
  const double lo = iv.bounds[k];
  const double hi = iv.bounds[k - 1];
  return lo + u * (hi - lo);
}

double sample_continuous_level(const LevelIntervals& iv, Rng& rng) {
  const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(iv.count())));
  return level_from_draw(iv, k, rng.uniform());
}

}  // namespace pnr
