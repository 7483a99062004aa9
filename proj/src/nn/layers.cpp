#include "pnr/nn/layers.hpp"

#include <cmath>

namespace pnr::nn {

template <class T>
Conv2d<T>::Conv2d(ParamStore<T>& store, const std::string& name, ConvGeometry g)
    : g_(g),
      w_(&store.add(name + ".weight", {g.out_channels, g.in_channels, g.kernel, g.kernel})),
      b_(&store.add(name + ".bias", {g.out_channels})) {}

template <class T>
void Conv2d<T>::init_uniform(Rng& rng) {
  const double fan_in = static_cast<double>(g_.in_channels) * g_.kernel * g_.kernel;
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : w_->value) v = static_cast<T>(rng.uniform(-bound, bound));
  std::fill(b_->value.begin(), b_->value.end(), T(0));
}

template <class T>
void Conv2d<T>::init_zero() {
  std::fill(w_->value.begin(), w_->value.end(), T(0));
  std::fill(b_->value.begin(), b_->value.end(), T(0));
}

template <class T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, bool cache) {
  if (cache) input_ = x;
  return conv2d_forward<T>(x, w_->value, b_->value, g_);
}

template <class T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& gy, bool want_input_grad) {
  if (input_.empty()) throw UsageError("Conv2d::backward without a cached forward");
  return conv2d_backward<T>(input_, w_->value, gy, g_, w_->grad, b_->grad, want_input_grad);
}

template <class T>
ResBlock<T>::ResBlock(ParamStore<T>& store, const std::string& name, int in_channels, int out_channels,
                      Resample resample, Rng& rng)
    : in_(in_channels),
      out_(out_channels),
      resample_(resample),
      conv1_(store, name + ".conv1", ConvGeometry{in_channels, out_channels, 3, 1}),
      conv2_(store, name + ".conv2", ConvGeometry{out_channels, out_channels, 3, 1}) {
  if (in_channels != out_channels || resample != Resample::none)
    proj_.emplace(store, name + ".skip", ConvGeometry{in_channels, out_channels, 1, 1});
  conv1_.init_uniform(rng);
  conv2_.init_zero();
  if (proj_) proj_->init_uniform(rng);
}

template <class T>
Tensor<T> ResBlock<T>::resample_forward(const Tensor<T>& x) const {
  switch (resample_) {
    case Resample::down:
      return avg_pool2_forward(x);
    case Resample::up:
      return upsample_nearest_forward(x);
    case Resample::none:
      break;
  }
  return x;
}

template <class T>
Tensor<T> ResBlock<T>::resample_backward(const Tensor<T>& gy, const Shape& in_shape) const {
  switch (resample_) {
    case Resample::down:
      return avg_pool2_backward(gy, in_shape);
    case Resample::up:
      return upsample_nearest_backward(gy);
    case Resample::none:
      break;
  }
  return gy;
}

template <class T>
Tensor<T> ResBlock<T>::forward(const Tensor<T>& x, bool cache) {
  if (x.shape().c != in_)
    throw UsageError("ResBlock: expected " + std::to_string(in_) + " channels, got " + std::to_string(x.shape().c));
  Tensor<T> a1 = resample_forward(silu_forward(x));
  Tensor<T> h1 = conv1_.forward(a1, cache);
  Tensor<T> h2 = conv2_.forward(silu_forward(h1), cache);
  Tensor<T> skip = resample_forward(x);
  if (proj_) skip = proj_->forward(skip, cache);
  add_inplace(h2, skip);
  if (cache) {
    x_ = x;
    a1_shape_ = a1.shape();
    h1_ = std::move(h1);
  }
  return h2;
}

template <class T>
Tensor<T> ResBlock<T>::backward(const Tensor<T>& gy) {
  if (x_.empty()) throw UsageError("ResBlock::backward without a cached forward");
  // main path
  Tensor<T> g = conv2_.backward(gy);
  g = silu_backward(h1_, g);
  g = conv1_.backward(g);
  g = resample_backward(g, x_.shape());
  Tensor<T> gx = silu_backward(x_, g);
  // skip path
  Tensor<T> gs = proj_ ? proj_->backward(gy) : gy;
  gs = resample_backward(gs, x_.shape());
  add_inplace(gx, gs);
  return gx;
}

template <class T>
std::int64_t ResBlock<T>::flops(int in_h, int in_w, int& out_h, int& out_w) const {
  int h = in_h, w = in_w;
  if (resample_ == Resample::down) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  } else if (resample_ == Resample::up) {
    h *= 2;
    w *= 2;
  }
  std::int64_t f = conv1_.flops(h, w) + conv2_.flops(h, w);
  if (proj_) f += proj_->flops(h, w);
  out_h = h;
  out_w = w;
  return f;
}

template class Conv2d<float>;
template class Conv2d<double>;
template class ResBlock<float>;
template class ResBlock<double>;

}  // namespace pnr::nn
