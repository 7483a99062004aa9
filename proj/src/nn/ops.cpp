#include "pnr/nn/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <vector>

namespace pnr::nn {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> as_array(Tensor<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.size())};
}
template <class T>
Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> as_array(const Tensor<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.size())};
}

void check_geometry(const Shape& xs, const ConvGeometry& g) {
  if (g.kernel < 1 || g.kernel % 2 == 0) throw UsageError("conv2d: kernel size must be odd");
  if (g.stride != 1 && g.stride != 2) throw UsageError("conv2d: stride must be 1 or 2");
  if (xs.c != g.in_channels)
    throw UsageError("conv2d: expected " + std::to_string(g.in_channels) + " input channels, got " +
                     std::to_string(xs.c));
  if (g.stride == 2 && (xs.h < g.kernel || xs.w < g.kernel))
    throw UsageError("conv2d: stride-2 input smaller than the kernel");
}

// Rows are (cin, ky, kx), columns are output pixels; `ld` is the row stride
// so several images can share one column matrix.
template <class T>
void im2col(const T* img, const Shape& xs, const ConvGeometry& g, int oh, int ow, T* col, std::size_t ld) {
  const int k = g.kernel;
  const int pad = k / 2;
  const std::size_t ncols = ld;
  for (int c = 0; c < xs.c; ++c) {
    const T* plane = img + static_cast<std::size_t>(c) * xs.h * xs.w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * ncols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride + ky - pad;
          T* dst = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= xs.h) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * xs.w;
          if (g.stride == 1) {
            const int x0 = kx - pad;
            const int lo = std::min(ow, std::max(0, -x0));
            const int hi = std::max(lo, std::min(ow, xs.w - x0));
            std::fill(dst, dst + lo, T(0));
            std::copy(src + lo + x0, src + hi + x0, dst + lo);
            std::fill(dst + hi, dst + ow, T(0));
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * g.stride + kx - pad;
              dst[ox] = (ix >= 0 && ix < xs.w) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const Shape& xs, const ConvGeometry& g, int oh, int ow, T* img, std::size_t ld) {
  const int k = g.kernel;
  const int pad = k / 2;
  const std::size_t ncols = ld;
  for (int c = 0; c < xs.c; ++c) {
    T* plane = img + static_cast<std::size_t>(c) * xs.h * xs.w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * ncols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride + ky - pad;
          if (iy < 0 || iy >= xs.h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * ow;
          T* dst = plane + static_cast<std::size_t>(iy) * xs.w;
          if (g.stride == 1) {
            const int x0 = kx - pad;
            const int lo = std::max(0, -x0);
            const int hi = std::min(ow, xs.w - x0);
            for (int ox = lo; ox < hi; ++ox) dst[ox + x0] += src[ox];
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * g.stride + kx - pad;
              if (ix >= 0 && ix < xs.w) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1; }

// Items are processed in groups whose stacked column count stays near this,
// so small feature maps share one GEMM and large ones stay cache friendly.
constexpr std::size_t kGroupColumns = 2048;

struct ItemGroup {
  int first = 0;
  int count = 0;
};

std::vector<ItemGroup> item_groups(int n, std::size_t per_item) {
  const int step = static_cast<int>(std::max<std::size_t>(1, kGroupColumns / std::max<std::size_t>(1, per_item)));
  std::vector<ItemGroup> out;
  for (int i = 0; i < n; i += step) out.push_back({i, std::min(step, n - i)});
  return out;
}

// Stack items [first, first + count) side by side: rows x (count * P).
template <class T>
void gather_items(const Tensor<T>& t, ItemGroup grp, int rows, int P, RowMat<T>& out) {
  out.resize(rows, static_cast<Eigen::Index>(grp.count) * P);
  for (int i = 0; i < grp.count; ++i)
    out.middleCols(static_cast<Eigen::Index>(i) * P, P) = ConstMapMat<T>(t.item(grp.first + i).data(), rows, P);
}

template <class T>
void scatter_items(const RowMat<T>& m, ItemGroup grp, int rows, int P, Tensor<T>& t) {
  for (int i = 0; i < grp.count; ++i)
    MapMat<T>(t.item(grp.first + i).data(), rows, P) = m.middleCols(static_cast<Eigen::Index>(i) * P, P);
}

template <class T>
void group_im2col(const Tensor<T>& x, ItemGroup grp, const ConvGeometry& g, int oh, int ow, RowMat<T>& col) {
  const int K = g.in_channels * g.kernel * g.kernel;
  const std::size_t P = static_cast<std::size_t>(oh) * ow;
  const std::size_t ld = grp.count * P;
  col.resize(K, static_cast<Eigen::Index>(ld));
  for (int i = 0; i < grp.count; ++i) im2col(x.item(grp.first + i).data(), x.shape(), g, oh, ow, col.data() + i * P, ld);
}

}  // namespace

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias,
                         const ConvGeometry& g) {
  const Shape& xs = x.shape();
  check_geometry(xs, g);
  const int K = g.in_channels * g.kernel * g.kernel;
  if (weight.size() != static_cast<std::size_t>(g.out_channels) * K || bias.size() != static_cast<std::size_t>(g.out_channels))
    throw UsageError("conv2d: parameter sizes do not match geometry");
  const int oh = g.out_size(xs.h);
  const int ow = g.out_size(xs.w);
  const int P = oh * ow;
  Tensor<T> y(Shape{xs.n, g.out_channels, oh, ow});
  ConstMapMat<T> W(weight.data(), g.out_channels, K);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias.data(), g.out_channels);
  RowMat<T> col, Y;
  for (const ItemGroup grp : item_groups(xs.n, static_cast<std::size_t>(P))) {
    if (is_pointwise(g)) gather_items(x, grp, K, P, col);
    else group_im2col(x, grp, g, oh, ow, col);
    if (grp.count == 1) {
      MapMat<T> Yi(y.item(grp.first).data(), g.out_channels, P);
      Yi.noalias() = W * col;
      Yi.colwise() += b;
      continue;
    }
    Y.resize(g.out_channels, col.cols());
    Y.noalias() = W * col;
    Y.colwise() += b;
    scatter_items(Y, grp, g.out_channels, P, y);
  }
  return y;
}

template <class T>
Tensor<T> conv2d_backward(const Tensor<T>& x, std::span<const T> weight, const Tensor<T>& gy,
                          const ConvGeometry& g, std::span<T> grad_weight, std::span<T> grad_bias,
                          bool want_input_grad) {
  const Shape& xs = x.shape();
  check_geometry(xs, g);
  const int K = g.in_channels * g.kernel * g.kernel;
  const int oh = g.out_size(xs.h);
  const int ow = g.out_size(xs.w);
  const int P = oh * ow;
  require_same_shape(gy.shape(), Shape{xs.n, g.out_channels, oh, ow}, "conv2d_backward");
  ConstMapMat<T> W(weight.data(), g.out_channels, K);
  MapMat<T> gW(grad_weight.data(), g.out_channels, K);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(grad_bias.data(), g.out_channels);

  const bool pw = is_pointwise(g);
  Tensor<T> gx;
  if (want_input_grad) gx = Tensor<T>(xs);
  RowMat<T> GY, col;
  for (const ItemGroup grp : item_groups(xs.n, static_cast<std::size_t>(P))) {
    gather_items(gy, grp, g.out_channels, P, GY);
    if (pw) gather_items(x, grp, K, P, col);
    else group_im2col(x, grp, g, oh, ow, col);
    gW.noalias() += GY * col.transpose();
    gb.noalias() += GY.rowwise().sum();
    if (!want_input_grad) continue;
    col.noalias() = W.transpose() * GY;
    if (pw) {
      scatter_items(col, grp, K, P, gx);
    } else {
      const std::size_t ld = static_cast<std::size_t>(grp.count) * P;
      for (int i = 0; i < grp.count; ++i)
        col2im_add(col.data() + static_cast<std::size_t>(i) * P, xs, g, oh, ow, gx.item(grp.first + i).data(), ld);
    }
  }
  return gx;
}

template <class T>
Tensor<T> upsample_nearest_forward(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tensor<T> y(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < 2 * s.h; ++i)
        for (int j = 0; j < 2 * s.w; ++j) y.at(n, c, i, j) = x.at(n, c, i / 2, j / 2);
  return y;
}

template <class T>
Tensor<T> upsample_nearest_backward(const Tensor<T>& gy) {
  const Shape& s = gy.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) throw UsageError("upsample backward: odd gradient size");
  Tensor<T> gx(Shape{s.n, s.c, s.h / 2, s.w / 2});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) gx.at(n, c, i / 2, j / 2) += gy.at(n, c, i, j);
  return gx;
}

template <class T>
Tensor<T> avg_pool2_forward(const Tensor<T>& x) {
  const Shape& s = x.shape();
  const int oh = (s.h + 1) / 2;
  const int ow = (s.w + 1) / 2;
  Tensor<T> y(Shape{s.n, s.c, oh, ow});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          T acc = 0;
          int cnt = 0;
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj) {
              const int yy = 2 * i + di, xx = 2 * j + dj;
              if (yy < s.h && xx < s.w) {
                acc += x.at(n, c, yy, xx);
                ++cnt;
              }
            }
          y.at(n, c, i, j) = acc / static_cast<T>(cnt);
        }
  return y;
}

template <class T>
Tensor<T> avg_pool2_backward(const Tensor<T>& gy, const Shape& in_shape) {
  const Shape& s = in_shape;
  require_same_shape(gy.shape(), Shape{s.n, s.c, (s.h + 1) / 2, (s.w + 1) / 2}, "avg_pool2_backward");
  Tensor<T> gx(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int yy = 0; yy < s.h; ++yy)
        for (int xx = 0; xx < s.w; ++xx) {
          const int i = yy / 2, j = xx / 2;
          const int rows = std::min(2, s.h - 2 * i);
          const int cols = std::min(2, s.w - 2 * j);
          gx.at(n, c, yy, xx) = gy.at(n, c, i, j) / static_cast<T>(rows * cols);
        }
  return gx;
}

template <class T>
Tensor<T> silu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const auto X = as_array(x);
  // evaluate exp into aligned storage; writing straight into y lets the
  // peeled head use scalar exp, which rounds differently
  const auto S = (T(1) / (T(1) + (-X).exp())).eval();
  as_array(y) = X * S;
  return y;
}

template <class T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& gy) {
  require_same_shape(x.shape(), gy.shape(), "silu_backward");
  Tensor<T> gx(x.shape());
  const auto X = as_array(x);
  const auto S = (T(1) / (T(1) + (-X).exp())).eval();
  as_array(gx) = as_array(gy) * S * (T(1) + X * (T(1) - S));
  return gx;
}

template <class T>
Tensor<T> leaky_relu_forward(const Tensor<T>& x, T slope) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] >= 0 ? x[i] : slope * x[i];
  return y;
}

template <class T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& gy, T slope) {
  require_same_shape(x.shape(), gy.shape(), "leaky_relu_backward");
  Tensor<T> gx(x.shape());
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = x[i] >= 0 ? gy[i] : slope * gy[i];
  return gx;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw UsageError("concat_channels: " + sa.str() + " vs " + sb.str());
  Tensor<T> y(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    auto dst = y.item(n);
    auto ia = a.item(n);
    auto ib = b.item(n);
    std::copy(ia.begin(), ia.end(), dst.begin());
    std::copy(ib.begin(), ib.end(), dst.begin() + static_cast<std::ptrdiff_t>(ia.size()));
  }
  return y;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, int channels_a) {
  const Shape& s = g.shape();
  if (channels_a <= 0 || channels_a >= s.c) throw UsageError("split_channels: bad split");
  Tensor<T> a(Shape{s.n, channels_a, s.h, s.w});
  Tensor<T> b(Shape{s.n, s.c - channels_a, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    auto src = g.item(n);
    auto da = a.item(n);
    auto db = b.item(n);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(da.size()), da.begin());
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(da.size()), src.end(), db.begin());
  }
  return {std::move(a), std::move(b)};
}

template <class T>
Tensor<T> reflect_pad_forward(const Tensor<T>& x, int h, int w) {
  const Shape& s = x.shape();
  if (h < s.h || w < s.w) throw UsageError("reflect_pad: target smaller than input");
  if (h == s.h && w == s.w) return x;
  Tensor<T> y(Shape{s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) y.at(n, c, i, j) = x.at(n, c, reflect_index(i, s.h), reflect_index(j, s.w));
  return y;
}

template <class T>
Tensor<T> reflect_pad_backward(const Tensor<T>& gy, const Shape& in_shape) {
  const Shape& g = gy.shape();
  if (g == in_shape) return gy;
  Tensor<T> gx(in_shape);
  for (int n = 0; n < g.n; ++n)
    for (int c = 0; c < g.c; ++c)
      for (int i = 0; i < g.h; ++i)
        for (int j = 0; j < g.w; ++j)
          gx.at(n, c, reflect_index(i, in_shape.h), reflect_index(j, in_shape.w)) += gy.at(n, c, i, j);
  return gx;
}

template <class T>
Tensor<T> crop_forward(const Tensor<T>& x, int h, int w) {
  const Shape& s = x.shape();
  if (h > s.h || w > s.w) throw UsageError("crop: window larger than input");
  if (h == s.h && w == s.w) return x;
  Tensor<T> y(Shape{s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) y.at(n, c, i, j) = x.at(n, c, i, j);
  return y;
}

template <class T>
Tensor<T> crop_backward(const Tensor<T>& gy, const Shape& in_shape) {
  const Shape& g = gy.shape();
  if (g == in_shape) return gy;
  Tensor<T> gx(in_shape);
  for (int n = 0; n < g.n; ++n)
    for (int c = 0; c < g.c; ++c)
      for (int i = 0; i < g.h; ++i)
        for (int j = 0; j < g.w; ++j) gx.at(n, c, i, j) = gy.at(n, c, i, j);
  return gx;
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add_inplace");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

#define PNR_INSTANTIATE_OPS(T)                                                                              \
  template Tensor<T> conv2d_forward(const Tensor<T>&, std::span<const T>, std::span<const T>,               \
                                    const ConvGeometry&);                                                   \
  template Tensor<T> conv2d_backward(const Tensor<T>&, std::span<const T>, const Tensor<T>&,                \
                                     const ConvGeometry&, std::span<T>, std::span<T>, bool);                \
  template Tensor<T> upsample_nearest_forward(const Tensor<T>&);                                            \
  template Tensor<T> upsample_nearest_backward(const Tensor<T>&);                                           \
  template Tensor<T> avg_pool2_forward(const Tensor<T>&);                                                   \
  template Tensor<T> avg_pool2_backward(const Tensor<T>&, const Shape&);                                    \
  template Tensor<T> silu_forward(const Tensor<T>&);                                                        \
  template Tensor<T> silu_backward(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> leaky_relu_forward(const Tensor<T>&, T);                                               \
  template Tensor<T> leaky_relu_backward(const Tensor<T>&, const Tensor<T>&, T);                            \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                   \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, int);                           \
  template Tensor<T> reflect_pad_forward(const Tensor<T>&, int, int);                                       \
  template Tensor<T> reflect_pad_backward(const Tensor<T>&, const Shape&);                                  \
  template Tensor<T> crop_forward(const Tensor<T>&, int, int);                                              \
  template Tensor<T> crop_backward(const Tensor<T>&, const Shape&);                                         \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);

PNR_INSTANTIATE_OPS(float)
PNR_INSTANTIATE_OPS(double)

#undef PNR_INSTANTIATE_OPS

}  // namespace pnr::nn
