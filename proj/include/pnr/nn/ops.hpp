#pragma once

#include <span>
#include <utility>

#include "pnr/tensor.hpp"

// Differentiable primitives. Each forward has a matching backward that takes
// the upstream gradient and returns the gradient w.r.t. the input; parameter
// gradients are accumulated (+=) into caller-provided buffers.
namespace pnr::nn {

struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;  // odd
  int stride = 1;  // 1 or 2

  int out_size(int n) const { return stride == 1 ? n : (n + 1) / 2; }
};

// Same-padded (zero) 2-D cross-correlation. Weights laid out [Cout][Cin][k][k].
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias,
                         const ConvGeometry& g);

// Returns dL/dx (empty tensor when want_input_grad is false).
template <class T>
Tensor<T> conv2d_backward(const Tensor<T>& x, std::span<const T> weight, const Tensor<T>& gy,
                          const ConvGeometry& g, std::span<T> grad_weight, std::span<T> grad_bias,
                          bool want_input_grad = true);

// Pixel replication by 2 in both spatial axes.
template <class T>
Tensor<T> upsample_nearest_forward(const Tensor<T>& x);
template <class T>
Tensor<T> upsample_nearest_backward(const Tensor<T>& gy);

// 2x2 mean with stride 2. Odd trailing rows/cols average over the cells present.
template <class T>
Tensor<T> avg_pool2_forward(const Tensor<T>& x);
template <class T>
Tensor<T> avg_pool2_backward(const Tensor<T>& gy, const Shape& in_shape);

template <class T>
Tensor<T> silu_forward(const Tensor<T>& x);
template <class T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& gy);

template <class T>
Tensor<T> leaky_relu_forward(const Tensor<T>& x, T slope);
template <class T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& gy, T slope);

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
// Inverse of concat: first `channels_a` channels, then the rest.
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, int channels_a);

// Reflect-pad on the bottom/right edges up to (h, w).
template <class T>
Tensor<T> reflect_pad_forward(const Tensor<T>& x, int h, int w);
template <class T>
Tensor<T> reflect_pad_backward(const Tensor<T>& gy, const Shape& in_shape);

// Keep the top-left (h, w) window.
template <class T>
Tensor<T> crop_forward(const Tensor<T>& x, int h, int w);
template <class T>
Tensor<T> crop_backward(const Tensor<T>& gy, const Shape& in_shape);

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

}  // namespace pnr::nn
