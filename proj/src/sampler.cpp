#include "pnr/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "pnr/diffusion.hpp"

namespace pnr {

void SampleConfig::validate() const {
  if (steps < 1) throw UsageError("sampling needs at least one step");
  if (!(var_end > 0.0 && var_end < 1.0)) throw UsageError("final variance must lie in (0, 1)");
  if (var_end < kInferenceVarStart) throw UsageError("final variance must be at least 1e-6");
  if (n_samples < 1) throw UsageError("n_samples must be at least 1");
}

NetworkModel::NetworkModel(std::unique_ptr<Model<float>> model, bool use_ema) : model_(std::move(model)) {
  if (!model_) throw UsageError("NetworkModel needs a model");
  if (use_ema) {
    model_->predictor.net().params().load_shadows_into_values();
    model_->denoiser.net().params().load_shadows_into_values();
  }
  for (auto* store : {&model_->predictor.net().params(), &model_->denoiser.net().params()})
    for (std::size_t i = 0; i < store->tensor_count(); ++i)
      for (float v : (*store)[i].value)
        if (!std::isfinite(v)) throw NumericError("model parameter " + (*store)[i].name + " is not finite");
}

ImageTensor NetworkModel::predict(const ImageTensor& y) { return model_->predictor.forward(y, false); }

ImageTensor NetworkModel::denoise(const ImageTensor& zt, std::span<const double> levels, const ImageTensor& y) {
  return model_->denoiser.forward(zt, levels, y, false);
}

std::uint64_t sample_stream_seed(std::uint64_t seed, std::uint64_t image_id, std::uint64_t sample_index) {
  return derive_seed(seed, {image_id, sample_index});
}

ImageTensor refine_step(const ImageTensor& zt, const ImageTensor& eps_hat, int t, const NoiseSchedule& s,
                        const ImageTensor& noise) {
  const double ab = s.alphabar(t);
  const auto clip = [](double v) { return std::clamp(v, -kResidualBound, kResidualBound); };
  if (ab >= kAlphabarFloor) {
    ImageTensor x0 = predict_x0_from_eps(zt, eps_hat, ab);
    for (float& v : x0.span()) v = static_cast<float>(clip(v));
    return reverse_step(zt, x0, t, s, noise);
  }

  // below the floor the estimate is formed in double and is almost always
  // clipped; its weight coef_x0 is at most sqrt(ab_{t-1}) anyway
  require_same_shape(zt.shape(), eps_hat.shape(), "refine_step");
  require_same_shape(zt.shape(), noise.shape(), "refine_step");
  const auto c = posterior_coeffs(s, t);
  const double root = std::sqrt(ab), sd = std::sqrt(c.beta);
  const double noise_scale = std::sqrt(1.0 - ab);
  ImageTensor out(zt.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0 = root > 0.0 ? clip((zt[i] - noise_scale * eps_hat[i]) / root) : 0.0;
    out[i] = static_cast<float>(c.coef_x0 * x0 + c.coef_xt * zt[i] + sd * noise[i]);
  }
  return out;
}

namespace {

ImageTensor repeat_batch(const ImageTensor& y, int count) {
  Shape s = y.shape();
  s.n = count;
  ImageTensor out(s);
  const auto src = y.item(0);
  for (int n = 0; n < count; ++n) std::copy(src.begin(), src.end(), out.item(n).begin());
  return out;
}

}  // namespace

ImageTensor sample_residuals(RestorationModel& model, const ImageTensor& y, const NoiseSchedule& s,
                             std::uint64_t seed, std::uint64_t image_id, int first, int count) {
  if (y.shape().n != 1) throw UsageError("sampling expects a single conditioning image");
  if (count < 1 || first < 0) throw UsageError("bad sample range");
  const ImageTensor ys = repeat_batch(y, count);
  std::vector<Rng> streams;
  streams.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) streams.emplace_back(sample_stream_seed(seed, image_id, static_cast<std::uint64_t>(first + i)));

  const auto draw = [&](ImageTensor& t) {
    for (int i = 0; i < count; ++i)
      for (float& v : t.item(i)) v = static_cast<float>(streams[static_cast<std::size_t>(i)].normal());
  };
  ImageTensor z(ys.shape());
  draw(z);
  ImageTensor noise(ys.shape());
  for (int t = s.steps(); t >= 1; --t) {
    const double level = std::sqrt(s.alphabar(t));
    const ImageTensor eps_hat = model.denoise(z, std::span<const double>(&level, 1), ys);
    if (t > 1) draw(noise);
    else noise.fill(0.0f);
    z = refine_step(z, eps_hat, t, s, noise);
  }
  require_finite(z, "sampler");
  return z;
}

ImageTensor clamp_unit(const ImageTensor& img) {
  ImageTensor out = img;
  for (float& v : out.span()) v = std::clamp(v, -1.0f, 1.0f);
  return out;
}

std::vector<ImageTensor> sample_set(RestorationModel& model, const ImageTensor& y, const SampleConfig& cfg,
                                    std::uint64_t image_id) {
  cfg.validate();
  const NoiseSchedule s = build_inference_schedule(cfg.steps, cfg.var_end);
  const ImageTensor x_init = model.predict(y);
  require_same_shape(x_init.shape(), y.shape(), "predictor output");
  const ImageTensor z = sample_residuals(model, y, s, cfg.seed, image_id, 0, cfg.n_samples);
  std::vector<ImageTensor> out;
  out.reserve(static_cast<std::size_t>(cfg.n_samples));
  for (int i = 0; i < cfg.n_samples; ++i) {
    ImageTensor r = batch_item(z, i);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] += x_init[k];
    out.push_back(clamp_unit(r));
  }
  return out;
}

ImageTensor sample(RestorationModel& model, const ImageTensor& y, const SampleConfig& cfg, std::uint64_t image_id) {
  SampleConfig one = cfg;
  one.n_samples = 1;
  return sample_set(model, y, one, image_id).front();
}

ImageTensor mean_of(std::span<const ImageTensor> images) {
  if (images.empty()) throw UsageError("mean of no images");
  std::vector<double> acc(images.front().size(), 0.0);
  for (const auto& img : images) {
    require_same_shape(img.shape(), images.front().shape(), "mean_of");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += img[i];
  }
  ImageTensor out(images.front().shape());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / static_cast<double>(images.size()));
  return out;
}

ImageTensor sample_average(RestorationModel& model, const ImageTensor& y, const SampleConfig& cfg,
                           std::uint64_t image_id) {
  const auto set = sample_set(model, y, cfg, image_id);
  return clamp_unit(mean_of(set));
}

}  // namespace pnr
