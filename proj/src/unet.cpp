#include "pnr/unet.hpp"

namespace pnr {

using nn::ConvGeometry;
using nn::ResBlock;
using nn::Resample;

void UNetConfig::validate() const {
  if (base_channels < 1) throw UsageError("U-Net base_channels must be positive");
  if (blocks_per_depth < 1) throw UsageError("U-Net blocks_per_depth must be positive");
  if (in_channels < 1 || out_channels < 1) throw UsageError("U-Net channel counts must be positive");
  for (int m : channel_multipliers)
    if (m < 1) throw UsageError("U-Net channel multipliers must be positive");
}

UNetConfig predictor_config(int image_channels, int base_channels, int blocks_per_depth) {
  UNetConfig c;
  c.base_channels = base_channels;
  c.blocks_per_depth = blocks_per_depth;
  c.in_channels = image_channels;
  c.out_channels = image_channels;
  return c;
}

UNetConfig denoiser_config(int image_channels, int base_channels, int blocks_per_depth) {
  UNetConfig c = predictor_config(image_channels, base_channels, blocks_per_depth);
  c.in_channels = 2 * image_channels + 1;
  return c;
}

namespace {
int round_up(int v, int m) { return (v + m - 1) / m * m; }
}  // namespace

template <class T>
UNet<T>::UNet(const UNetConfig& config, std::uint64_t init_seed, const std::string& prefix)
    : config_((config.validate(), config)),
      stem_(store_, prefix + ".stem", ConvGeometry{config.in_channels, config.channels(0), 3, 1}) {
  constexpr int D = UNetConfig::kDepths;
  const int B = config_.blocks_per_depth;
  Rng rng(init_seed);
  stem_.init_uniform(rng);

  const auto name = [&](const char* part, int d, int b) {
    return prefix + "." + part + std::to_string(d) + "_" + std::to_string(b);
  };
  encoder_.reserve(static_cast<std::size_t>(D * B));
  for (int d = 0; d < D; ++d) {
    for (int b = 0; b < B; ++b) {
      const int in = b > 0 ? config_.channels(d) : config_.channels(d > 0 ? d - 1 : 0);
      encoder_.emplace_back(store_, name("enc", d, b), in, config_.channels(d), Resample::none, rng);
    }
    if (d < D - 1)
      down_.emplace_back(store_, name("down", d, 0), config_.channels(d), config_.channels(d), Resample::down, rng);
  }
  middle_.emplace_back(store_, prefix + ".mid", config_.channels(D - 1), config_.channels(D - 1), Resample::none,
                       rng);
  for (int d = D - 1; d >= 0; --d) {
    for (int b = 0; b < B; ++b)
      decoder_.emplace_back(store_, name("dec", d, b), 2 * config_.channels(d), config_.channels(d), Resample::none,
                            rng);
    if (d > 0)
      up_.emplace_back(store_, name("up", d, 0), config_.channels(d), config_.channels(d - 1), Resample::up, rng);
  }
  head_.emplace(store_, prefix + ".head", ConvGeometry{config_.channels(0), config_.out_channels, 3, 1});
  head_->init_zero();
  skip_enabled_.assign(static_cast<std::size_t>(D * B), true);
}

template <class T>
Tensor<T> UNet<T>::forward(const Tensor<T>& x, bool cache) {
  constexpr int D = UNetConfig::kDepths;
  const int B = config_.blocks_per_depth;
  const Shape in = x.shape();
  if (in.c != config_.in_channels)
    throw UsageError("U-Net expects " + std::to_string(config_.in_channels) + " input channels, got " +
                     std::to_string(in.c));
  Tensor<T> h = nn::reflect_pad_forward(x, round_up(in.h, UNetConfig::kSpatialMultiple),
                                        round_up(in.w, UNetConfig::kSpatialMultiple));
  const Shape padded = h.shape();
  h = stem_.forward(h, cache);

  std::vector<Tensor<T>> skips;
  skips.reserve(encoder_.size());
  for (int d = 0; d < D; ++d) {
    for (int b = 0; b < B; ++b) {
      h = encoder_[static_cast<std::size_t>(d * B + b)].forward(h, cache);
      skips.push_back(h);
    }
    if (d < D - 1) h = down_[static_cast<std::size_t>(d)].forward(h, cache);
  }
  h = middle_[0].forward(h, cache);
  std::size_t di = 0, ui = 0;
  for (int d = D - 1; d >= 0; --d) {
    for (int b = 0; b < B; ++b) {
      const std::size_t idx = static_cast<std::size_t>(d * B + (B - 1 - b));
      Tensor<T> skip = skip_enabled_[idx] ? std::move(skips[idx]) : Tensor<T>(skips[idx].shape());
      h = decoder_[di++].forward(nn::concat_channels(h, skip), cache);
    }
    if (d > 0) h = up_[ui++].forward(h, cache);
  }
  Tensor<T> out = head_->forward(nn::silu_forward(h), cache);
  if (cache) {
    in_shape_ = in;
    padded_shape_ = padded;
    pre_head_ = std::move(h);
  }
  return nn::crop_forward(out, in.h, in.w);
}

template <class T>
Tensor<T> UNet<T>::backward(const Tensor<T>& gy) {
  constexpr int D = UNetConfig::kDepths;
  const int B = config_.blocks_per_depth;
  if (pre_head_.empty()) throw UsageError("U-Net backward without a cached forward");
  Shape out_padded = padded_shape_;
  out_padded.c = config_.out_channels;
  Tensor<T> g = nn::crop_backward(gy, out_padded);
  g = head_->backward(g);
  g = nn::silu_backward(pre_head_, g);

  std::vector<Tensor<T>> skip_grads(encoder_.size());
  for (int d = 0; d < D; ++d) {
    if (d > 0) g = up_[static_cast<std::size_t>(D - 1 - d)].backward(g);
    for (int b = B - 1; b >= 0; --b) {
      const std::size_t di = static_cast<std::size_t>((D - 1 - d) * B + b);
      const std::size_t idx = static_cast<std::size_t>(d * B + (B - 1 - b));
      auto [gh, gs] = nn::split_channels(decoder_[di].backward(g), config_.channels(d));
      g = std::move(gh);
      if (skip_enabled_[idx]) skip_grads[idx] = std::move(gs);
    }
  }
  g = middle_[0].backward(g);
  for (int d = D - 1; d >= 0; --d) {
    if (d < D - 1) g = down_[static_cast<std::size_t>(d)].backward(g);
    for (int b = B - 1; b >= 0; --b) {
      const std::size_t idx = static_cast<std::size_t>(d * B + b);
      if (!skip_grads[idx].empty()) nn::add_inplace(g, skip_grads[idx]);
      g = encoder_[idx].backward(g);
    }
  }
  g = stem_.backward(g);
  return nn::reflect_pad_backward(g, in_shape_);
}

template <class T>
std::int64_t UNet<T>::flops(int h, int w) const {
  int ch = round_up(h, UNetConfig::kSpatialMultiple);
  int cw = round_up(w, UNetConfig::kSpatialMultiple);
  std::int64_t total = stem_.flops(ch, cw);
  int oh = 0, ow = 0;
  const auto walk = [&](const std::vector<ResBlock<T>>& blocks, std::size_t i) {
    total += blocks[i].flops(ch, cw, oh, ow);
    ch = oh;
    cw = ow;
  };
  constexpr int D = UNetConfig::kDepths;
  const int B = config_.blocks_per_depth;
  for (int d = 0; d < D; ++d) {
    for (int b = 0; b < B; ++b) walk(encoder_, static_cast<std::size_t>(d * B + b));
    if (d < D - 1) walk(down_, static_cast<std::size_t>(d));
  }
  walk(middle_, 0);
  std::size_t di = 0, ui = 0;
  for (int d = D - 1; d >= 0; --d) {
    for (int b = 0; b < B; ++b) walk(decoder_, di++);
    if (d > 0) walk(up_, ui++);
  }
  return total + head_->flops(ch, cw);
}

template <class T>
Tensor<T> InitPredictor<T>::forward(const Tensor<T>& y, bool cache) {
  return net_.forward(y, cache);
}

template <class T>
Tensor<T> denoiser_input(const Tensor<T>& zt, std::span<const double> levels, const Tensor<T>& y) {
  const Shape& s = zt.shape();
  if (s.n != y.shape().n || s.h != y.shape().h || s.w != y.shape().w)
    throw UsageError("denoiser: z_t " + s.str() + " and y " + y.shape().str() + " are not aligned");
  if (levels.size() != 1 && levels.size() != static_cast<std::size_t>(s.n))
    throw UsageError("denoiser: need one noise level per batch item");
  Tensor<T> level(Shape{s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    const double lv = levels.size() == 1 ? levels[0] : levels[static_cast<std::size_t>(n)];
    const T v = lv < 1e-30 ? T(0) : static_cast<T>(lv);  // keep denormals out of the convolutions
    auto p = level.plane(n, 0);
    std::fill(p.begin(), p.end(), v);
  }
  return nn::concat_channels(nn::concat_channels(zt, y), level);
}

template <class T>
Tensor<T> Denoiser<T>::forward(const Tensor<T>& zt, std::span<const double> levels, const Tensor<T>& y,
                               bool cache) {
  if (zt.shape().c != channels_ || y.shape().c != channels_)
    throw UsageError("denoiser: expected " + std::to_string(channels_) + "-channel z_t and y");
  return net_.forward(denoiser_input(zt, levels, y), cache);
}

template <class T>
Tensor<T> Denoiser<T>::backward(const Tensor<T>& gy) {
  return nn::split_channels(net_.backward(gy), channels_).first;
}

template class UNet<float>;
template class UNet<double>;
template class InitPredictor<float>;
template class InitPredictor<double>;
template class Denoiser<float>;
template class Denoiser<double>;
template Tensor<float> denoiser_input(const Tensor<float>&, std::span<const double>, const Tensor<float>&);
template Tensor<double> denoiser_input(const Tensor<double>&, std::span<const double>, const Tensor<double>&);

}  // namespace pnr
