#pragma once

#include <cmath>
#include <string>

#include "pnr/schedule.hpp"
#include "pnr/tensor.hpp"

// Forward marginal, epsilon conversions, the reverse step and the L1 losses.
// All functions are pure; noise is always supplied by the caller.
namespace pnr {

// Smallest alphabar for which predict_x0_from_eps is allowed.
inline constexpr double kAlphabarFloor = 1e-8;

// sqrt(ab) * x0 + sqrt(1 - ab) * eps
template <class T>
Tensor<T> forward_marginal_sample(const Tensor<T>& x0, double alphabar, const Tensor<T>& eps) {
  require_same_shape(x0.shape(), eps.shape(), "forward_marginal_sample");
  if (!(alphabar > 0.0 && alphabar <= 1.0)) throw UsageError("alphabar must lie in (0, 1]");
  const double a = std::sqrt(alphabar);
  const double b = std::sqrt(1.0 - alphabar);
  Tensor<T> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(a * x0[i] + b * eps[i]);
  return out;
}

// (xt - sqrt(1 - ab) * eps_hat) / sqrt(ab)
template <class T>
Tensor<T> predict_x0_from_eps(const Tensor<T>& xt, const Tensor<T>& eps_hat, double alphabar) {
  require_same_shape(xt.shape(), eps_hat.shape(), "predict_x0_from_eps");
  if (!(alphabar >= kAlphabarFloor) || alphabar > 1.0)
    throw NumericError("predict_x0_from_eps: alphabar " + std::to_string(alphabar) +
                       " is below the conditioning floor");
  const double inv = 1.0 / std::sqrt(alphabar);
  const double b = std::sqrt(1.0 - alphabar);
  Tensor<T> out(xt.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>((xt[i] - b * eps_hat[i]) * inv);
  return out;
}

// One ancestral step: coef_x0 * x0_hat + coef_xt * xt + sqrt(beta_t) * noise.
template <class T>
Tensor<T> reverse_step(const Tensor<T>& xt, const Tensor<T>& x0_hat, int t, const NoiseSchedule& s,
                       const Tensor<T>& noise) {
  require_same_shape(xt.shape(), x0_hat.shape(), "reverse_step");
  require_same_shape(xt.shape(), noise.shape(), "reverse_step");
  const PosteriorCoeffs c = posterior_coeffs(s, t);
  const double sd = std::sqrt(c.beta);
  Tensor<T> out(xt.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(c.coef_x0 * x0_hat[i] + c.coef_xt * xt[i] + sd * noise[i]);
  return out;
}

// mean |eps - eps_hat|
template <class T>
double base_loss(const Tensor<T>& eps, const Tensor<T>& eps_hat) {
  require_same_shape(eps.shape(), eps_hat.shape(), "base_loss");
  std::vector<T> diff(eps.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = std::abs(eps[i] - eps_hat[i]);
  return pairwise_sum(std::span<const T>(diff)) / static_cast<double>(diff.size());
}

// d base_loss / d eps_hat. The subgradient at a tie is 0.
template <class T>
Tensor<T> base_loss_grad(const Tensor<T>& eps, const Tensor<T>& eps_hat) {
  require_same_shape(eps.shape(), eps_hat.shape(), "base_loss_grad");
  const T scale = T(1) / static_cast<T>(eps.size());
  Tensor<T> g(eps.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const T d = eps_hat[i] - eps[i];
    g[i] = d > 0 ? scale : (d < 0 ? -scale : T(0));
  }
  return g;
}

// x0 - x_init; the quantity the denoiser models.
template <class T>
Tensor<T> residual_target(const Tensor<T>& x0, const Tensor<T>& x_init) {
  require_same_shape(x0.shape(), x_init.shape(), "residual_target");
  Tensor<T> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x0[i] - x_init[i];
  return out;
}

}  // namespace pnr
