#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pnr/nn/layers.hpp"

namespace pnr {

// Four-depth U-Net shape. base_channels is the width at full resolution; the
// deeper levels use base_channels * channel_multipliers[d].
struct UNetConfig {
  static constexpr int kDepths = 4;
  // Inputs are reflect-padded to a multiple of this before the encoder.
  static constexpr int kSpatialMultiple = 1 << (kDepths - 1);

  int base_channels = 16;
  std::array<int, kDepths> channel_multipliers{1, 2, 3, 4};
  int blocks_per_depth = 1;
  int in_channels = 1;
  int out_channels = 1;

  int channels(int depth) const { return base_channels * channel_multipliers[static_cast<std::size_t>(depth)]; }
  void validate() const;
};

UNetConfig predictor_config(int image_channels, int base_channels, int blocks_per_depth = 1);
// Denoiser input is [z_t, y, level] stacked along channels.
UNetConfig denoiser_config(int image_channels, int base_channels, int blocks_per_depth = 1);

// Fully-convolutional U-Net. Encoder: stem conv, then per depth
// `blocks_per_depth` residual blocks (each output kept as a skip) followed by a
// downsampling block except at the deepest level. A middle block, then the
// mirrored decoder concatenates skips before each block and upsamples between
// depths. The output conv is zero-initialized.
template <class T>
class UNet {
 public:
  UNet(const UNetConfig& config, std::uint64_t init_seed, const std::string& prefix);

  // Any H x W: reflect-pads to a multiple of 8 internally and crops back.
  Tensor<T> forward(const Tensor<T>& x, bool cache = true);
  // dL/dx for the last cached forward; parameter grads accumulate in params().
  Tensor<T> backward(const Tensor<T>& gy);

  const UNetConfig& config() const { return config_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }
  std::size_t param_count() const { return store_.scalar_count(); }
  // Convolution FLOPs for one H x W image (at the padded resolution).
  std::int64_t flops(int h, int w) const;

  // Connectivity probe: a disabled skip feeds zeros into the decoder.
  std::size_t skip_count() const { return skip_enabled_.size(); }
  void set_skip_enabled(std::size_t index, bool enabled) { skip_enabled_.at(index) = enabled; }

 private:
  UNetConfig config_;
  nn::ParamStore<T> store_;
  nn::Conv2d<T> stem_;
  std::vector<nn::ResBlock<T>> encoder_;  // depth-major, blocks_per_depth each
  std::vector<nn::ResBlock<T>> down_;     // kDepths - 1
  std::vector<nn::ResBlock<T>> middle_;   // exactly one
  std::vector<nn::ResBlock<T>> decoder_;  // ordered as executed (deepest first)
  std::vector<nn::ResBlock<T>> up_;       // ordered as executed
  std::optional<nn::Conv2d<T>> head_;
  std::vector<bool> skip_enabled_;

  // forward cache
  Shape in_shape_{};
  Shape padded_shape_{};
  Tensor<T> pre_head_;
};

extern template class UNet<float>;
extern template class UNet<double>;

// g: y -> x_init
template <class T>
class InitPredictor {
 public:
  InitPredictor(int image_channels, int base_channels, int blocks_per_depth, std::uint64_t init_seed)
      : net_(predictor_config(image_channels, base_channels, blocks_per_depth), init_seed, "predictor") {}

  Tensor<T> forward(const Tensor<T>& y, bool cache = true);
  Tensor<T> backward(const Tensor<T>& gy) { return net_.backward(gy); }
  UNet<T>& net() { return net_; }
  const UNet<T>& net() const { return net_; }

 private:
  UNet<T> net_;
};

// f: (z_t, sqrt(alphabar), y) -> eps_hat. `levels` holds one sqrt(alphabar)
// per batch item, or a single value broadcast over the batch.
template <class T>
class Denoiser {
 public:
  Denoiser(int image_channels, int base_channels, int blocks_per_depth, std::uint64_t init_seed)
      : channels_(image_channels),
        net_(denoiser_config(image_channels, base_channels, blocks_per_depth), init_seed, "denoiser") {}

  Tensor<T> forward(const Tensor<T>& zt, std::span<const double> levels, const Tensor<T>& y, bool cache = true);
  // Returns dL/dz_t only (y and the level channel are not differentiated).
  Tensor<T> backward(const Tensor<T>& gy);
  UNet<T>& net() { return net_; }
  const UNet<T>& net() const { return net_; }

 private:
  int channels_;
  UNet<T> net_;
};

// [z_t, y, level-plane] along channels.
template <class T>
Tensor<T> denoiser_input(const Tensor<T>& zt, std::span<const double> levels, const Tensor<T>& y);

extern template class InitPredictor<float>;
extern template class InitPredictor<double>;
extern template class Denoiser<float>;
extern template class Denoiser<double>;

}  // namespace pnr
