#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "pnr/nn/ops.hpp"
#include "pnr/nn/params.hpp"
#include "pnr/rng.hpp"

namespace pnr::nn {

enum class Resample { none, down, up };

// Multiply-add FLOPs of one convolution at an output resolution: 2*k^2*Cin*Cout*H*W.
inline std::int64_t conv_flops(const ConvGeometry& g, int out_h, int out_w) {
  return std::int64_t{2} * g.kernel * g.kernel * g.in_channels * g.out_channels *
         std::int64_t{out_h} * out_w;
}

// Convolution with its parameters registered in a ParamStore. The input of the
// last cached forward is kept for backward; forward(x, false) is stateless.
template <class T>
class Conv2d {
 public:
  Conv2d(ParamStore<T>& store, const std::string& name, ConvGeometry g);

  // Kaiming-uniform weights (gain for SiLU-like activations), zero bias.
  void init_uniform(Rng& rng);
  void init_zero();

  Tensor<T> forward(const Tensor<T>& x, bool cache = true);
  Tensor<T> backward(const Tensor<T>& gy, bool want_input_grad = true);

  const ConvGeometry& geometry() const { return g_; }
  ParamTensor<T>& weight() { return *w_; }
  ParamTensor<T>& bias() { return *b_; }
  std::int64_t flops(int in_h, int in_w) const { return conv_flops(g_, g_.out_size(in_h), g_.out_size(in_w)); }

 private:
  ConvGeometry g_;
  ParamTensor<T>* w_;
  ParamTensor<T>* b_;
  Tensor<T> input_;
};

// Pre-activation residual block without normalization:
//   h = conv2(silu(conv1(resample(silu(x)))))
//   out = proj(resample(x)) + h
// proj is a 1x1 conv, present when channels change or the block resamples.
// conv2 starts at zero so a fresh block reduces to its skip path.
template <class T>
class ResBlock {
 public:
  ResBlock(ParamStore<T>& store, const std::string& name, int in_channels, int out_channels,
           Resample resample, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, bool cache = true);
  Tensor<T> backward(const Tensor<T>& gy);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Resample resample() const { return resample_; }
  bool has_projection() const { return proj_.has_value(); }
  Conv2d<T>& conv1() { return conv1_; }
  Conv2d<T>& conv2() { return conv2_; }

  // FLOPs at a given input resolution; also reports the output resolution.
  std::int64_t flops(int in_h, int in_w, int& out_h, int& out_w) const;

 private:
  Tensor<T> resample_forward(const Tensor<T>& x) const;
  Tensor<T> resample_backward(const Tensor<T>& gy, const Shape& in_shape) const;

  int in_;
  int out_;
  Resample resample_;
  Conv2d<T> conv1_;
  Conv2d<T> conv2_;
  std::optional<Conv2d<T>> proj_;
  // forward cache
  Tensor<T> x_;
  Tensor<T> h1_;
  Shape a1_shape_{};
};

extern template class Conv2d<float>;
extern template class Conv2d<double>;
extern template class ResBlock<float>;
extern template class ResBlock<double>;

}  // namespace pnr::nn
