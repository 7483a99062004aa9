#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "pnr/model.hpp"
#include "pnr/schedule.hpp"

namespace pnr {

struct SampleConfig {
  int steps = 100;
  double var_end = 0.1;
  int n_samples = 1;
  bool average = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// What the sampler needs from the networks. Batched: `y` may carry one image
// per item of `zt`, and `levels` one sqrt(alphabar) per item or a single value.
class RestorationModel {
 public:
  virtual ~RestorationModel() = default;
  virtual ImageTensor predict(const ImageTensor& y) = 0;
  virtual ImageTensor denoise(const ImageTensor& zt, std::span<const double> levels, const ImageTensor& y) = 0;
};

// Trained networks; uses the EMA shadows by default.
class NetworkModel : public RestorationModel {
 public:
  explicit NetworkModel(std::unique_ptr<Model<float>> model, bool use_ema = true);

  ImageTensor predict(const ImageTensor& y) override;
  ImageTensor denoise(const ImageTensor& zt, std::span<const double> levels, const ImageTensor& y) override;
  Model<float>& model() { return *model_; }

 private:
  std::unique_ptr<Model<float>> model_;
};

// Forwards to another model and counts calls.
class CountingModel : public RestorationModel {
 public:
  explicit CountingModel(RestorationModel& inner) : inner_(inner) {}

  ImageTensor predict(const ImageTensor& y) override {
    ++predictor_calls;
    return inner_.predict(y);
  }
  ImageTensor denoise(const ImageTensor& zt, std::span<const double> levels, const ImageTensor& y) override {
    ++denoiser_calls;
    return inner_.denoise(zt, levels, y);
  }

  std::int64_t predictor_calls = 0;
  std::int64_t denoiser_calls = 0;

 private:
  RestorationModel& inner_;
};

// Per-sample random stream: hash(seed, image_id, sample_index).
std::uint64_t sample_stream_seed(std::uint64_t seed, std::uint64_t image_id, std::uint64_t sample_index);

// Residuals are differences of two images in [-1, 1].
inline constexpr double kResidualBound = 2.0;

// One reverse update for a whole batch: eps -> x0 estimate, clipped to
// +-kResidualBound, then the posterior step. Below the conditioning floor the
// estimate is formed in double precision. `noise` is ignored at t = 1.
ImageTensor refine_step(const ImageTensor& zt, const ImageTensor& eps_hat, int t, const NoiseSchedule& s,
                        const ImageTensor& noise);

// The residual z_0 for samples [first, first + count) of image `image_id`, before
// x_init is added. One denoiser call per step for the whole set.
ImageTensor sample_residuals(RestorationModel& model, const ImageTensor& y, const NoiseSchedule& s,
                             std::uint64_t seed, std::uint64_t image_id, int first, int count);

// clamp(x_init + z_0) for n_samples samples of a single image (N = 1). One
// predictor call and cfg.steps denoiser calls in total.
std::vector<ImageTensor> sample_set(RestorationModel& model, const ImageTensor& y, const SampleConfig& cfg,
                                    std::uint64_t image_id = 0);

// Sample 0 of the set.
ImageTensor sample(RestorationModel& model, const ImageTensor& y, const SampleConfig& cfg,
                   std::uint64_t image_id = 0);

// Pixel mean of the n_samples singles, clamped.
ImageTensor sample_average(RestorationModel& model, const ImageTensor& y, const SampleConfig& cfg,
                           std::uint64_t image_id = 0);

ImageTensor mean_of(std::span<const ImageTensor> images);
ImageTensor clamp_unit(const ImageTensor& img);

}  // namespace pnr
