#include "hccr/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "hccr/gemm.hpp"
#include "hccr/parallel.hpp"
#include "hccr/random.hpp"

namespace hccr {

namespace {

constexpr std::size_t kTaps = 9;
constexpr std::size_t kColChunk = std::size_t{1} << 18;
constexpr std::size_t kMinChunkRows = 96;

struct SpatialShape {
  std::size_t n, h, w, c;
};

template <typename T>
SpatialShape spatial_of(const BasicTensor<T>& x, const char* op) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected N x H x W x C input, got " +
                     shape_string(x.shape()));
  }
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

// Rows of `col` are output pixels [row0, row0 + rows) counted across the
// whole batch; columns are (r, q, c) taps of the 3x3 window, matching the
// R x Q x C x M kernel layout.
template <typename T>
void im2col_rows(const T* x, const SpatialShape& s, std::size_t row0, std::size_t rows, T* col) {
  const std::size_t row_len = kTaps * s.c;
  const std::size_t pixels = s.h * s.w;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t g = row0 + i;
    const std::size_t n = g / pixels;
    const std::size_t y = (g % pixels) / s.w;
    const std::size_t xw = g % s.w;
    const T* image = x + n * pixels * s.c;
    T* row = col + i * row_len;
    for (std::size_t r = 0; r < 3; ++r) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + r) - 1;
      for (std::size_t q = 0; q < 3; ++q) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xw + q) - 1;
        T* dst = row + (r * 3 + q) * s.c;
        if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(s.h) ||
            ix >= static_cast<std::ptrdiff_t>(s.w)) {
          std::fill_n(dst, s.c, T{0});
        } else {
          std::memcpy(dst, image + (static_cast<std::size_t>(iy) * s.w + ix) * s.c, s.c * sizeof(T));
        }
      }
    }
  }
}

template <typename T>
void col2im_rows_add(const T* col, const SpatialShape& s, std::size_t row0, std::size_t rows, T* x) {
  const std::size_t row_len = kTaps * s.c;
  const std::size_t pixels = s.h * s.w;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t g = row0 + i;
    const std::size_t n = g / pixels;
    const std::size_t y = (g % pixels) / s.w;
    const std::size_t xw = g % s.w;
    T* image = x + n * pixels * s.c;
    const T* row = col + i * row_len;
    for (std::size_t r = 0; r < 3; ++r) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + r) - 1;
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
      for (std::size_t q = 0; q < 3; ++q) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xw + q) - 1;
        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
        const T* src = row + (r * 3 + q) * s.c;
        T* dst = image + (static_cast<std::size_t>(iy) * s.w + ix) * s.c;
        for (std::size_t ch = 0; ch < s.c; ++ch) dst[ch] += src[ch];
      }
    }
  }
}

// Rows per im2col chunk, sized so that a chunk stays cache resident.
std::size_t chunk_rows(std::size_t row_len, std::size_t total_rows) {
  const std::size_t rows = std::max<std::size_t>(kMinChunkRows, kColChunk / row_len);
  return std::min(rows, total_rows);
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Conv2dLayer<T>::Conv2dLayer(BasicTensor<T> k) : kernel(std::move(k)) {
  if (kernel.rank() != 4 || kernel.dim(0) != 3 || kernel.dim(1) != 3) {
    throw ShapeError("conv kernel must be 3 x 3 x C x M, got " + shape_string(kernel.shape()));
  }
}

template <typename T>
BasicTensor<T> conv2d_forward(const Conv2dLayer<T>& layer, const BasicTensor<T>& x) {
  const SpatialShape s = spatial_of(x, "conv2d_forward");
  if (s.c != layer.in_channels()) {
    throw ShapeError("conv2d_forward: input " + shape_string(x.shape()) +
                     " does not match kernel " + shape_string(layer.kernel.shape()));
  }
  const std::size_t m = layer.out_channels();
  const std::size_t total = s.n * s.h * s.w;
  const std::size_t row_len = kTaps * s.c;
  const std::size_t chunk = chunk_rows(row_len, total);
  const std::size_t pixels = s.h * s.w;

  BasicTensor<T> out(Shape{s.n, s.h, s.w, m});
  parallel_for(s.n, [&](std::size_t begin, std::size_t end, std::size_t) {
    std::vector<T> col(chunk * row_len);
    for (std::size_t row0 = begin * pixels; row0 < end * pixels; row0 += chunk) {
      const std::size_t rows = std::min(chunk, end * pixels - row0);
      im2col_rows(x.raw(), s, row0, rows, col.data());
      gemm(Trans::no, Trans::no, rows, m, row_len, T{1}, col.data(), row_len, layer.kernel.raw(), m, T{0},
           out.raw() + row0 * m, m);
    }
  });
  debug_check_finite(out, "conv2d_forward");
  return out;
}

template <typename T>
ConvGradients<T> conv2d_backward(const Conv2dLayer<T>& layer, const BasicTensor<T>& x,
                                 const BasicTensor<T>& grad_out, bool need_grad_x) {
  const SpatialShape s = spatial_of(x, "conv2d_backward");
  const std::size_t m = layer.out_channels();
  if (s.c != layer.in_channels() || grad_out.shape() != Shape{s.n, s.h, s.w, m}) {
    throw ShapeError("conv2d_backward: input " + shape_string(x.shape()) + ", grad " +
                     shape_string(grad_out.shape()) + " and kernel " +
                     shape_string(layer.kernel.shape()) + " are inconsistent");
  }
  const std::size_t total = s.n * s.h * s.w;
  const std::size_t row_len = kTaps * s.c;
  const std::size_t chunk = chunk_rows(row_len, total);
  const std::size_t pixels = s.h * s.w;
  const std::size_t workers = worker_count(s.n);

  ConvGradients<T> grads;
  if (need_grad_x) grads.grad_x = BasicTensor<T>(x.shape());
  std::vector<BasicTensor<T>> partial(workers);

  // Workers own whole samples, so their col2im writes never overlap.
  parallel_for(s.n, [&](std::size_t begin, std::size_t end, std::size_t worker) {
    std::vector<T> col(chunk * row_len);
    std::vector<T> grad_col(need_grad_x ? chunk * row_len : 0);
    BasicTensor<T> acc(layer.kernel.shape());
    for (std::size_t row0 = begin * pixels; row0 < end * pixels; row0 += chunk) {
      const std::size_t rows = std::min(chunk, end * pixels - row0);
      im2col_rows(x.raw(), s, row0, rows, col.data());
      const T* go = grad_out.raw() + row0 * m;
      gemm(Trans::yes, Trans::no, row_len, m, rows, T{1}, col.data(), row_len, go, m, T{1}, acc.raw(), m);
      if (need_grad_x) {
        gemm(Trans::no, Trans::yes, rows, row_len, m, T{1}, go, m, layer.kernel.raw(), m, T{0}, grad_col.data(),
             row_len);
        col2im_rows_add(grad_col.data(), s, row0, rows, grads.grad_x.raw());
      }
    }
    partial[worker] = std::move(acc);
  });

  grads.grad_kernel = std::move(partial[0]);
  for (std::size_t w = 1; w < workers; ++w) {
    T* dst = grads.grad_kernel.raw();
    const T* src = partial[w].raw();
    for (std::size_t i = 0; i < grads.grad_kernel.size(); ++i) dst[i] += src[i];
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
BatchNormLayer<T>::BatchNormLayer(std::size_t channels, T eps, T moving_momentum)
    : gamma(Shape{channels}, T{1}),
      beta(Shape{channels}, T{0}),
      moving_mean(Shape{channels}, T{0}),
      moving_var(Shape{channels}, T{1}),
      epsilon(eps),
      momentum(moving_momentum) {}

namespace {

template <typename T>
std::size_t check_bn_input(const BatchNormLayer<T>& layer, const BasicTensor<T>& x) {
  const std::size_t c = x.dim(x.rank() - 1);
  if (c != layer.channels()) {
    throw ShapeError("batchnorm: input " + shape_string(x.shape()) + " has " + std::to_string(c) +
                     " channels, layer has " + std::to_string(layer.channels()));
  }
  return c;
}

template <typename T>
void apply_affine(const BasicTensor<T>& x, const std::vector<T>& scale,
                  const std::vector<T>& shift, BasicTensor<T>& out) {
  const std::size_t c = scale.size();
  const std::size_t pixels = x.size() / c;
  const T* src = x.raw();
  T* dst = out.raw();
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) dst[p * c + ch] = src[p * c + ch] * scale[ch] + shift[ch];
  }
}

}  // namespace

template <typename T>
BasicTensor<T> batchnorm_infer(const BatchNormLayer<T>& layer, const BasicTensor<T>& x) {
  const std::size_t c = check_bn_input(layer, x);
  std::vector<T> scale(c);
  std::vector<T> shift(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    scale[ch] = layer.gamma[ch] / std::sqrt(layer.moving_var[ch] + layer.epsilon);
    shift[ch] = layer.beta[ch] - layer.moving_mean[ch] * scale[ch];
  }
  BasicTensor<T> out(x.shape());
  apply_affine(x, scale, shift, out);
  debug_check_finite(out, "batchnorm_forward");
  return out;
}

template <typename T>
BasicTensor<T> batchnorm_forward(BatchNormLayer<T>& layer, const BasicTensor<T>& x, Mode mode,
                                 BatchNormCache<T>* cache) {
  if (mode == Mode::infer) return batchnorm_infer(layer, x);

  const std::size_t c = check_bn_input(layer, x);
  const std::size_t count = x.size() / c;
  if (count < 2) {
    throw ConfigError("batchnorm: train mode needs at least two values per channel, input " +
                      shape_string(x.shape()) + " is degenerate");
  }
  std::vector<double> mean(c, 0.0);
  std::vector<double> var(c, 0.0);
  const T* src = x.raw();
  for (std::size_t p = 0; p < count; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += src[p * c + ch];
  }
  for (auto& v : mean) v /= static_cast<double>(count);
  for (std::size_t p = 0; p < count; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double d = src[p * c + ch] - mean[ch];
      var[ch] += d * d;
    }
  }
  for (auto& v : var) v /= static_cast<double>(count);

  std::vector<T> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var[ch] + static_cast<double>(layer.epsilon)));
  }
  BasicTensor<T> x_hat(x.shape());
  {
    std::vector<T> scale(inv_std);
    std::vector<T> shift(c);
    for (std::size_t ch = 0; ch < c; ++ch) shift[ch] = static_cast<T>(-mean[ch]) * scale[ch];
    apply_affine(x, scale, shift, x_hat);
  }
  BasicTensor<T> out(x.shape());
  {
    std::vector<T> scale(layer.gamma.data().begin(), layer.gamma.data().end());
    std::vector<T> shift(layer.beta.data().begin(), layer.beta.data().end());
    apply_affine(x_hat, scale, shift, out);
  }

  const double unbias = static_cast<double>(count) / static_cast<double>(count - 1);
  const T mom = layer.momentum;
  for (std::size_t ch = 0; ch < c; ++ch) {
    layer.moving_mean[ch] = mom * layer.moving_mean[ch] + (T{1} - mom) * static_cast<T>(mean[ch]);
    layer.moving_var[ch] =
        mom * layer.moving_var[ch] + (T{1} - mom) * static_cast<T>(var[ch] * unbias);
  }
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
  }
  debug_check_finite(out, "batchnorm_forward");
  return out;
}

template <typename T>
BatchNormGradients<T> batchnorm_backward(const BatchNormLayer<T>& layer,
                                         const BatchNormCache<T>& cache,
                                         const BasicTensor<T>& grad_out) {
  if (grad_out.shape() != cache.x_hat.shape() || cache.inv_std.size() != layer.channels()) {
    throw ShapeError("batchnorm_backward: grad " + shape_string(grad_out.shape()) +
                     " does not match cached input " + shape_string(cache.x_hat.shape()));
  }
  const std::size_t c = layer.channels();
  const std::size_t count = grad_out.size() / c;
  std::vector<double> sum_dy(c, 0.0);
  std::vector<double> sum_dy_xhat(c, 0.0);
  const T* dy = grad_out.raw();
  const T* xh = cache.x_hat.raw();
  for (std::size_t p = 0; p < count; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      sum_dy[ch] += dy[p * c + ch];
      sum_dy_xhat[ch] += static_cast<double>(dy[p * c + ch]) * xh[p * c + ch];
    }
  }
  BatchNormGradients<T> g;
  g.grad_gamma = BasicTensor<T>(Shape{c});
  g.grad_beta = BasicTensor<T>(Shape{c});
  std::vector<T> scale(c);
  std::vector<T> mean_dy(c);
  std::vector<T> mean_dy_xhat(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    g.grad_gamma[ch] = static_cast<T>(sum_dy_xhat[ch]);
    g.grad_beta[ch] = static_cast<T>(sum_dy[ch]);
    scale[ch] = layer.gamma[ch] * cache.inv_std[ch];
    mean_dy[ch] = static_cast<T>(sum_dy[ch] / static_cast<double>(count));
    mean_dy_xhat[ch] = static_cast<T>(sum_dy_xhat[ch] / static_cast<double>(count));
  }
  g.grad_x = BasicTensor<T>(grad_out.shape());
  T* dx = g.grad_x.raw();
  for (std::size_t p = 0; p < count; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = p * c + ch;
      dx[i] = scale[ch] * (dy[i] - mean_dy[ch] - xh[i] * mean_dy_xhat[ch]);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  const T* src = x.raw();
  T* dst = out.raw();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out) {
  if (x.shape() != grad_out.shape()) {
    throw ShapeError("relu_backward: " + shape_string(x.shape()) + " vs " +
                     shape_string(grad_out.shape()));
  }
  BasicTensor<T> out(x.shape());
  const T* src = x.raw();
  const T* g = grad_out.raw();
  T* dst = out.raw();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = src[i] > T{0} ? g[i] : T{0};
  return out;
}

// ---------------------------------------------------------------------------
// Average pooling

std::size_t AvgPoolLayer::pad_before(std::size_t n) {
  const std::size_t out = output_extent(n);
  const std::size_t needed = (out - 1) * stride + window;
  const std::size_t total = needed > n ? needed - n : 0;
  return total / 2;
}

namespace {

struct PoolWindow {
  std::size_t begin, end;
};

PoolWindow pool_window(std::size_t o, std::size_t pad, std::size_t n) {
  const std::ptrdiff_t start =
      static_cast<std::ptrdiff_t>(o * AvgPoolLayer::stride) - static_cast<std::ptrdiff_t>(pad);
  const std::ptrdiff_t stop = start + static_cast<std::ptrdiff_t>(AvgPoolLayer::window);
  return {static_cast<std::size_t>(std::max<std::ptrdiff_t>(start, 0)),
          static_cast<std::size_t>(std::min<std::ptrdiff_t>(stop, static_cast<std::ptrdiff_t>(n)))};
}

}  // namespace

template <typename T>
BasicTensor<T> avgpool_forward(const BasicTensor<T>& x) {
  const SpatialShape s = spatial_of(x, "avgpool_forward");
  const std::size_t oh = AvgPoolLayer::output_extent(s.h);
  const std::size_t ow = AvgPoolLayer::output_extent(s.w);
  const std::size_t pad_h = AvgPoolLayer::pad_before(s.h);
  const std::size_t pad_w = AvgPoolLayer::pad_before(s.w);
  BasicTensor<T> out(Shape{s.n, oh, ow, s.c});
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = x.raw() + n * s.h * s.w * s.c;
    T* dst = out.raw() + n * oh * ow * s.c;
    for (std::size_t y = 0; y < oh; ++y) {
      const PoolWindow wy = pool_window(y, pad_h, s.h);
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const PoolWindow wx = pool_window(xo, pad_w, s.w);
        T* cell = dst + (y * ow + xo) * s.c;
        for (std::size_t iy = wy.begin; iy < wy.end; ++iy) {
          for (std::size_t ix = wx.begin; ix < wx.end; ++ix) {
            const T* in = src + (iy * s.w + ix) * s.c;
            for (std::size_t ch = 0; ch < s.c; ++ch) cell[ch] += in[ch];
          }
        }
        const T inv = T{1} / static_cast<T>((wy.end - wy.begin) * (wx.end - wx.begin));
        for (std::size_t ch = 0; ch < s.c; ++ch) cell[ch] *= inv;
      }
    }
  }
  debug_check_finite(out, "avgpool_forward");
  return out;
}

template <typename T>
BasicTensor<T> avgpool_backward(const Shape& input_shape, const BasicTensor<T>& grad_out) {
  if (input_shape.size() != 4) throw ShapeError("avgpool_backward: expected rank-4 input shape");
  const SpatialShape s{input_shape[0], input_shape[1], input_shape[2], input_shape[3]};
  const std::size_t oh = AvgPoolLayer::output_extent(s.h);
  const std::size_t ow = AvgPoolLayer::output_extent(s.w);
  if (grad_out.shape() != Shape{s.n, oh, ow, s.c}) {
    throw ShapeError("avgpool_backward: grad " + shape_string(grad_out.shape()) +
                     " does not match input " + shape_string(input_shape));
  }
  const std::size_t pad_h = AvgPoolLayer::pad_before(s.h);
  const std::size_t pad_w = AvgPoolLayer::pad_before(s.w);
  BasicTensor<T> grad_x(input_shape);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* go = grad_out.raw() + n * oh * ow * s.c;
    T* gx = grad_x.raw() + n * s.h * s.w * s.c;
    for (std::size_t y = 0; y < oh; ++y) {
      const PoolWindow wy = pool_window(y, pad_h, s.h);
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const PoolWindow wx = pool_window(xo, pad_w, s.w);
        const T inv = T{1} / static_cast<T>((wy.end - wy.begin) * (wx.end - wx.begin));
        const T* cell = go + (y * ow + xo) * s.c;
        for (std::size_t iy = wy.begin; iy < wy.end; ++iy) {
          for (std::size_t ix = wx.begin; ix < wx.end; ++ix) {
            T* dst = gx + (iy * s.w + ix) * s.c;
            for (std::size_t ch = 0; ch < s.c; ++ch) dst[ch] += cell[ch] * inv;
          }
        }
      }
    }
  }
  return grad_x;
}

// ---------------------------------------------------------------------------
// Global pooling heads

const char* to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::gap: return "GAP";
    case HeadKind::gwoap: return "GWOAP";
    case HeadKind::gwap: return "GWAP";
  }
  return "?";
}

namespace {

struct FeatureShape {
  std::size_t n, h, w, c;
  bool batched;
};

template <typename T>
FeatureShape feature_shape(const BasicTensor<T>& f, const char* op) {
  if (f.rank() == 3) return {1, f.dim(0), f.dim(1), f.dim(2), false};
  if (f.rank() == 4) return {f.dim(0), f.dim(1), f.dim(2), f.dim(3), true};
  throw ShapeError(std::string(op) + ": expected H x W x C or N x H x W x C, got " +
                   shape_string(f.shape()));
}

template <typename T>
BasicTensor<T> pooled_output(const FeatureShape& s) {
  return s.batched ? BasicTensor<T>(Shape{s.n, s.c}) : BasicTensor<T>(Shape{s.c});
}

template <typename T>
void check_head_kernel(const PoolingHead<T>& head, const FeatureShape& s, const char* op) {
  const bool ok = head.kind == HeadKind::gwoap ? head.kernel.shape() == Shape{s.c}
                                               : head.kernel.shape() == Shape{s.h, s.w, s.c};
  if (!ok) {
    throw ShapeError(std::string(op) + ": kernel " + shape_string(head.kernel.shape()) +
                     " does not match feature map " +
                     shape_string(Shape{s.h, s.w, s.c}));
  }
}

// Per-sample, per-channel spatial sums.
template <typename T>
std::vector<T> spatial_sums(const BasicTensor<T>& f, const FeatureShape& s) {
  std::vector<T> sums(s.n * s.c, T{0});
  const std::size_t pixels = s.h * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = f.raw() + n * pixels * s.c;
    T* dst = sums.data() + n * s.c;
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t ch = 0; ch < s.c; ++ch) dst[ch] += src[p * s.c + ch];
    }
  }
  return sums;
}

}  // namespace

template <typename T>
BasicTensor<T> gap_forward(const BasicTensor<T>& features) {
  const FeatureShape s = feature_shape(features, "gap_forward");
  BasicTensor<T> out = pooled_output<T>(s);
  const std::vector<T> sums = spatial_sums(features, s);
  const T inv = T{1} / static_cast<T>(s.h * s.w);
  for (std::size_t i = 0; i < sums.size(); ++i) out[i] = sums[i] * inv;
  return out;
}

template <typename T>
BasicTensor<T> gwoap_forward(const PoolingHead<T>& head, const BasicTensor<T>& features) {
  const FeatureShape s = feature_shape(features, "gwoap_forward");
  check_head_kernel(head, s, "gwoap_forward");
  BasicTensor<T> out = pooled_output<T>(s);
  const std::vector<T> sums = spatial_sums(features, s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t ch = 0; ch < s.c; ++ch) out[n * s.c + ch] = head.kernel[ch] * sums[n * s.c + ch];
  }
  return out;
}

template <typename T>
BasicTensor<T> gwap_forward(const PoolingHead<T>& head, const BasicTensor<T>& features) {
  const FeatureShape s = feature_shape(features, "gwap_forward");
  check_head_kernel(head, s, "gwap_forward");
  BasicTensor<T> out = pooled_output<T>(s);
  const std::size_t pixels = s.h * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = features.raw() + n * pixels * s.c;
    T* dst = out.raw() + n * s.c;
    for (std::size_t p = 0; p < pixels; ++p) {
      const T* k = head.kernel.raw() + p * s.c;
      for (std::size_t ch = 0; ch < s.c; ++ch) dst[ch] += k[ch] * src[p * s.c + ch];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> pooling_forward(const PoolingHead<T>& head, const BasicTensor<T>& features) {
  switch (head.kind) {
    case HeadKind::gap: return gap_forward(features);
    case HeadKind::gwoap: return gwoap_forward(head, features);
    case HeadKind::gwap: return gwap_forward(head, features);
  }
  throw ConfigError("unknown pooling head");
}

template <typename T>
PoolingGradients<T> pooling_backward(const PoolingHead<T>& head, const BasicTensor<T>& features,
                                     const BasicTensor<T>& grad_out) {
  const FeatureShape s = feature_shape(features, "pooling_backward");
  if (grad_out.size() != s.n * s.c || grad_out.shape() != pooled_output<T>(s).shape()) {
    throw ShapeError("pooling_backward: grad " + shape_string(grad_out.shape()) +
                     " does not match features " + shape_string(features.shape()));
  }
  if (head.kind != HeadKind::gap) check_head_kernel(head, s, "pooling_backward");
  const std::size_t pixels = s.h * s.w;
  PoolingGradients<T> g;
  g.grad_features = BasicTensor<T>(features.shape());
  switch (head.kind) {
    case HeadKind::gap: {
      const T inv = T{1} / static_cast<T>(pixels);
      for (std::size_t n = 0; n < s.n; ++n) {
        T* dst = g.grad_features.raw() + n * pixels * s.c;
        const T* go = grad_out.raw() + n * s.c;
        for (std::size_t p = 0; p < pixels; ++p) {
          for (std::size_t ch = 0; ch < s.c; ++ch) dst[p * s.c + ch] = go[ch] * inv;
        }
      }
      break;
    }
    case HeadKind::gwoap: {
      g.grad_kernel = BasicTensor<T>(head.kernel.shape());
      const std::vector<T> sums = spatial_sums(features, s);
      for (std::size_t n = 0; n < s.n; ++n) {
        T* dst = g.grad_features.raw() + n * pixels * s.c;
        const T* go = grad_out.raw() + n * s.c;
        for (std::size_t p = 0; p < pixels; ++p) {
          for (std::size_t ch = 0; ch < s.c; ++ch) dst[p * s.c + ch] = go[ch] * head.kernel[ch];
        }
        for (std::size_t ch = 0; ch < s.c; ++ch) g.grad_kernel[ch] += go[ch] * sums[n * s.c + ch];
      }
      break;
    }
    case HeadKind::gwap: {
      g.grad_kernel = BasicTensor<T>(head.kernel.shape());
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* src = features.raw() + n * pixels * s.c;
        T* dst = g.grad_features.raw() + n * pixels * s.c;
        const T* go = grad_out.raw() + n * s.c;
        for (std::size_t p = 0; p < pixels; ++p) {
          const T* k = head.kernel.raw() + p * s.c;
          T* gk = g.grad_kernel.raw() + p * s.c;
          for (std::size_t ch = 0; ch < s.c; ++ch) {
            dst[p * s.c + ch] = go[ch] * k[ch];
            gk[ch] += go[ch] * src[p * s.c + ch];
          }
        }
      }
      break;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Dense + softmax

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  if (logits.rank() > 2) throw ShapeError("softmax: expected K or N x K logits");
  const std::size_t k = logits.dim(logits.rank() - 1);
  const std::size_t rows = logits.size() / k;
  BasicTensor<T> probs(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.raw() + r * k;
    T* p = probs.raw() + r * k;
    const T top = *std::max_element(z, z + k);
    T total{0};
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(z[j] - top);
      total += p[j];
    }
    const T inv = T{1} / total;
    for (std::size_t j = 0; j < k; ++j) p[j] *= inv;
  }
  return probs;
}

template <typename T>
DenseOutput<T> dense_softmax_forward(const DenseSoftmaxLayer<T>& layer,
                                     const BasicTensor<T>& features, bool zero_bias) {
  const std::size_t c = layer.inputs();
  const std::size_t k = layer.classes();
  const bool batched = features.rank() == 2;
  if ((features.rank() != 1 && !batched) || features.dim(features.rank() - 1) != c) {
    throw ShapeError("dense_softmax_forward: features " + shape_string(features.shape()) +
                     " do not match weights " + shape_string(layer.weights.shape()));
  }
  const std::size_t n = batched ? features.dim(0) : 1;
  DenseOutput<T> out;
  out.logits = batched ? BasicTensor<T>(Shape{n, k}) : BasicTensor<T>(Shape{k});
  gemm(Trans::no, Trans::no, n, k, c, T{1}, features.raw(), c, layer.weights.raw(), k, T{0},
       out.logits.raw(), k);
  if (!zero_bias) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < k; ++j) out.logits[r * k + j] += layer.bias[j];
    }
  }
  out.probs = softmax(out.logits);
  debug_check_finite(out.probs, "dense_softmax_forward");
  return out;
}

template <typename T>
BasicTensor<T> softmax_cross_entropy_grad(const BasicTensor<T>& probs,
                                          const std::vector<std::size_t>& labels) {
  const std::size_t k = probs.dim(probs.rank() - 1);
  const std::size_t n = probs.size() / k;
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy_grad: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  }
  BasicTensor<T> grad = probs;
  const T inv = T{1} / static_cast<T>(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] >= k) throw DataError("label " + std::to_string(labels[r]) + " out of range");
    grad[r * k + labels[r]] -= T{1};
    for (std::size_t j = 0; j < k; ++j) grad[r * k + j] *= inv;
  }
  return grad;
}

template <typename T>
DenseGradients<T> dense_backward(const DenseSoftmaxLayer<T>& layer,
                                 const BasicTensor<T>& features,
                                 const BasicTensor<T>& grad_logits) {
  const std::size_t c = layer.inputs();
  const std::size_t k = layer.classes();
  const std::size_t n = features.size() / c;
  if (features.size() != n * c || grad_logits.size() != n * k) {
    throw ShapeError("dense_backward: features " + shape_string(features.shape()) + " and grad " +
                     shape_string(grad_logits.shape()) + " are inconsistent");
  }
  DenseGradients<T> g;
  g.grad_features = BasicTensor<T>(features.shape());
  g.grad_weights = BasicTensor<T>(layer.weights.shape());
  g.grad_bias = BasicTensor<T>(layer.bias.shape());
  gemm(Trans::yes, Trans::no, c, k, n, T{1}, features.raw(), c, grad_logits.raw(), k, T{0},
       g.grad_weights.raw(), k);
  gemm(Trans::no, Trans::yes, n, c, k, T{1}, grad_logits.raw(), k, layer.weights.raw(), k, T{0},
       g.grad_features.raw(), c);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < k; ++j) g.grad_bias[j] += grad_logits[r * k + j];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Dropout

template <typename T>
BasicTensor<T> dropout_mask(const DropoutLayer<T>& layer, const Shape& shape) {
  if (!(layer.p_drop >= T{0} && layer.p_drop < T{1})) {
    throw ConfigError("dropout probability must be in [0, 1)");
  }
  BasicTensor<T> mask(shape);
  const T keep_scale = T{1} / (T{1} - layer.p_drop);
  const double p = static_cast<double>(layer.p_drop);
  Rng rng(layer.rng_seed);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < p ? T{0} : keep_scale;
  return mask;
}

template <typename T>
BasicTensor<T> dropout_forward(const DropoutLayer<T>& layer, const BasicTensor<T>& x, Mode mode,
                               BasicTensor<T>* mask_out) {
  if (mode == Mode::infer || layer.p_drop == T{0}) {
    if (mask_out) *mask_out = BasicTensor<T>(x.shape(), T{1});
    return x;
  }
  BasicTensor<T> mask = dropout_mask(layer, x.shape());
  BasicTensor<T> out = elementwise_mul(x, mask);
  if (mask_out) *mask_out = std::move(mask);
  return out;
}

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& mask, const BasicTensor<T>& grad_out) {
  if (mask.shape() != grad_out.shape()) {
    throw ShapeError("dropout_backward: mask " + shape_string(mask.shape()) + " vs grad " +
                     shape_string(grad_out.shape()));
  }
  return elementwise_mul(grad_out, mask);
}

// ---------------------------------------------------------------------------

#define HCCR_INSTANTIATE_LAYERS(T)                                                            \
  template struct Conv2dLayer<T>;                                                             \
  template BasicTensor<T> conv2d_forward(const Conv2dLayer<T>&, const BasicTensor<T>&);       \
  template ConvGradients<T> conv2d_backward(const Conv2dLayer<T>&, const BasicTensor<T>&,     \
                                            const BasicTensor<T>&, bool);                     \
  template struct BatchNormLayer<T>;                                                          \
  template BasicTensor<T> batchnorm_forward(BatchNormLayer<T>&, const BasicTensor<T>&, Mode,  \
                                            BatchNormCache<T>*);                              \
  template BasicTensor<T> batchnorm_infer(const BatchNormLayer<T>&, const BasicTensor<T>&);   \
  template BatchNormGradients<T> batchnorm_backward(                                          \
      const BatchNormLayer<T>&, const BatchNormCache<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                        \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> avgpool_forward(const BasicTensor<T>&);                             \
  template BasicTensor<T> avgpool_backward(const Shape&, const BasicTensor<T>&);              \
  template BasicTensor<T> gap_forward(const BasicTensor<T>&);                                 \
  template BasicTensor<T> gwoap_forward(const PoolingHead<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> gwap_forward(const PoolingHead<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> pooling_forward(const PoolingHead<T>&, const BasicTensor<T>&);      \
  template PoolingGradients<T> pooling_backward(const PoolingHead<T>&, const BasicTensor<T>&, \
                                                const BasicTensor<T>&);                       \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                     \
  template DenseOutput<T> dense_softmax_forward(const DenseSoftmaxLayer<T>&,                  \
                                                const BasicTensor<T>&, bool);                 \
  template BasicTensor<T> softmax_cross_entropy_grad(const BasicTensor<T>&,                   \
                                                     const std::vector<std::size_t>&);        \
  template DenseGradients<T> dense_backward(const DenseSoftmaxLayer<T>&, const BasicTensor<T>&, \
                                            const BasicTensor<T>&);                           \
  template BasicTensor<T> dropout_mask(const DropoutLayer<T>&, const Shape&);                 \
  template BasicTensor<T> dropout_forward(const DropoutLayer<T>&, const BasicTensor<T>&, Mode, \
                                          BasicTensor<T>*);                                   \
  template BasicTensor<T> dropout_backward(const BasicTensor<T>&, const BasicTensor<T>&);

HCCR_INSTANTIATE_LAYERS(float)
HCCR_INSTANTIATE_LAYERS(double)

#undef HCCR_INSTANTIATE_LAYERS

}  // namespace hccr
