#pragma once

// Forward and backward passes for the layer types of the recognition
// networks. Activations are N x H x W x C. Every function is instantiated for
// float (training and inference) and double (gradient checking).

#include <cstdint>
#include <vector>

#include "hccr/tensor.hpp"

namespace hccr {

enum class Mode { train, infer };

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 1, zero "same" padding, no bias. Cross-correlation
// (the kernel is not flipped).

template <typename T>
struct Conv2dLayer {
  BasicTensor<T> kernel;  // 3 x 3 x C x M

  Conv2dLayer() = default;
  explicit Conv2dLayer(BasicTensor<T> k);

  std::size_t in_channels() const { return kernel.dim(2); }
  std::size_t out_channels() const { return kernel.dim(3); }
};

template <typename T>
struct ConvGradients {
  BasicTensor<T> grad_x;  // empty when not requested
  BasicTensor<T> grad_kernel;
};

template <typename T>
BasicTensor<T> conv2d_forward(const Conv2dLayer<T>& layer, const BasicTensor<T>& x);

template <typename T>
ConvGradients<T> conv2d_backward(const Conv2dLayer<T>& layer, const BasicTensor<T>& x,
                                 const BasicTensor<T>& grad_out, bool need_grad_x = true);

// ---------------------------------------------------------------------------
// Batch normalization over N x H x W per channel.

template <typename T>
struct BatchNormLayer {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  BasicTensor<T> moving_mean;
  BasicTensor<T> moving_var;
  T epsilon = T(1e-3);
  T momentum = T(0.99);

  BatchNormLayer() = default;
  BatchNormLayer(std::size_t channels, T eps, T moving_momentum);

  std::size_t channels() const { return gamma.size(); }
};

// Saved by a train-mode forward for the backward pass.
template <typename T>
struct BatchNormCache {
  BasicTensor<T> x_hat;
  std::vector<T> inv_std;
};

// Train mode normalizes with biased batch statistics and folds them into the
// moving averages (the variance with Bessel's correction). Infer mode uses the
// moving statistics. Throws ShapeError on a channel mismatch and ConfigError
// when a train-mode channel has fewer than two values to estimate from.
template <typename T>
BasicTensor<T> batchnorm_forward(BatchNormLayer<T>& layer, const BasicTensor<T>& x, Mode mode,
                                 BatchNormCache<T>* cache = nullptr);

template <typename T>
BasicTensor<T> batchnorm_infer(const BatchNormLayer<T>& layer, const BasicTensor<T>& x);

template <typename T>
struct BatchNormGradients {
  BasicTensor<T> grad_x;
  BasicTensor<T> grad_gamma;
  BasicTensor<T> grad_beta;
};

template <typename T>
BatchNormGradients<T> batchnorm_backward(const BatchNormLayer<T>& layer,
                                         const BatchNormCache<T>& cache,
                                         const BasicTensor<T>& grad_out);

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

// Gradient is masked where x <= 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out);

// ---------------------------------------------------------------------------
// 3x3 average pooling, stride 2, "same" style: output extent ceil(n / 2).
// Padding is split with the smaller half before (0 before / 1 after for even
// extents) and padded cells are not counted in the denominator.

struct AvgPoolLayer {
  static constexpr std::size_t window = 3;
  static constexpr std::size_t stride = 2;

  static std::size_t output_extent(std::size_t n) { return (n + stride - 1) / stride; }
  static std::size_t pad_before(std::size_t n);
};

template <typename T>
BasicTensor<T> avgpool_forward(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> avgpool_backward(const Shape& input_shape, const BasicTensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Global pooling heads over an H x W x C map (or a batch N x H x W x C).
//   GAP:   out[m] = 1/(HW) * sum_ij F[i,j,m]
//   GWOAP: out[m] = w[m] * sum_ij F[i,j,m]          (kernel shape C)
//   GWAP:  out[m] = sum_ij W[i,j,m] * F[i,j,m]      (kernel shape H x W x C)

enum class HeadKind : std::uint8_t { gap = 0, gwoap = 1, gwap = 2 };

const char* to_string(HeadKind kind);

template <typename T>
struct PoolingHead {
  HeadKind kind = HeadKind::gap;
  BasicTensor<T> kernel;  // empty for GAP

  static PoolingHead make_gap() { return PoolingHead{}; }
  static PoolingHead make_gwoap(std::size_t channels, T init = T{1}) {
    return PoolingHead{HeadKind::gwoap, BasicTensor<T>(Shape{channels}, init)};
  }
  static PoolingHead make_gwap(std::size_t height, std::size_t width, std::size_t channels,
                               T init = T{1}) {
    return PoolingHead{HeadKind::gwap, BasicTensor<T>(Shape{height, width, channels}, init)};
  }
};

template <typename T>
BasicTensor<T> gap_forward(const BasicTensor<T>& features);

template <typename T>
BasicTensor<T> gwoap_forward(const PoolingHead<T>& head, const BasicTensor<T>& features);

template <typename T>
BasicTensor<T> gwap_forward(const PoolingHead<T>& head, const BasicTensor<T>& features);

// Dispatches on head.kind.
template <typename T>
BasicTensor<T> pooling_forward(const PoolingHead<T>& head, const BasicTensor<T>& features);

template <typename T>
struct PoolingGradients {
  BasicTensor<T> grad_features;
  BasicTensor<T> grad_kernel;  // empty for GAP
};

template <typename T>
PoolingGradients<T> pooling_backward(const PoolingHead<T>& head, const BasicTensor<T>& features,
                                     const BasicTensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Fully connected layer into a softmax.

template <typename T>
struct DenseSoftmaxLayer {
  BasicTensor<T> weights;  // C x K
  BasicTensor<T> bias;     // K

  std::size_t inputs() const { return weights.dim(0); }
  std::size_t classes() const { return weights.dim(1); }
};

template <typename T>
struct DenseOutput {
  BasicTensor<T> logits;
  BasicTensor<T> probs;
};

// Row-wise softmax with max subtraction, rank 1 (K) or rank 2 (N x K).
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

// `features` is C or N x C. With zero_bias the stored bias is ignored.
template <typename T>
DenseOutput<T> dense_softmax_forward(const DenseSoftmaxLayer<T>& layer,
                                     const BasicTensor<T>& features, bool zero_bias = false);

// Gradient of the batch-mean cross-entropy w.r.t. the logits: (p - onehot) / N.
template <typename T>
BasicTensor<T> softmax_cross_entropy_grad(const BasicTensor<T>& probs,
                                          const std::vector<std::size_t>& labels);

template <typename T>
struct DenseGradients {
  BasicTensor<T> grad_features;
  BasicTensor<T> grad_weights;
  BasicTensor<T> grad_bias;
};

template <typename T>
DenseGradients<T> dense_backward(const DenseSoftmaxLayer<T>& layer,
                                 const BasicTensor<T>& features,
                                 const BasicTensor<T>& grad_logits);

// ---------------------------------------------------------------------------
// Inverted dropout: train mode zeroes each element with probability p_drop and
// scales survivors by 1 / (1 - p_drop); infer mode is the identity.

template <typename T>
struct DropoutLayer {
  T p_drop = T(0.5);
  std::uint64_t rng_seed = 0;
};

// Scaled keep mask (values 0 or 1/(1-p)) drawn from layer.rng_seed.
template <typename T>
BasicTensor<T> dropout_mask(const DropoutLayer<T>& layer, const Shape& shape);

// When `mask_out` is given in train mode it receives the mask that was applied.
template <typename T>
BasicTensor<T> dropout_forward(const DropoutLayer<T>& layer, const BasicTensor<T>& x, Mode mode,
                               BasicTensor<T>* mask_out = nullptr);

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& mask, const BasicTensor<T>& grad_out);

}  // namespace hccr
