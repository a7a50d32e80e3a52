#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hccr/layers.hpp"
#include "hccr/tensor.hpp"

namespace hccr {

// A: GAP head, B: GWOAP head, C: GWAP head. The convolutional stack is shared.
enum class Variant : std::uint8_t { A = 0, B = 1, C = 2 };

HeadKind head_kind(Variant variant);
char to_char(Variant variant);
Variant parse_variant(const std::string& text);  // "A", "b", ... ; throws ConfigError

struct BlockPlan {
  std::size_t channels;    // M: first and last conv of the block
  std::size_t bottleneck;  // M_B: middle conv
};

struct ModelConfig {
  Variant variant = Variant::A;
  std::size_t input_size = 96;
  std::size_t num_classes = 3755;
  std::vector<std::size_t> stem{64, 64};
  std::vector<BlockPlan> blocks{{96, 64}, {128, 96}, {256, 192}, {448, 256}};
  float bn_epsilon = 1e-3f;
  float bn_momentum = 0.99f;
  float dropout = 0.5f;
  // Initial value of every GWOAP/GWAP kernel entry.
  float head_init = 1.0f;

  // Side of the last feature map: input_size ceil-halved once per block.
  std::size_t feature_size() const;
  std::size_t feature_channels() const { return blocks.back().channels; }

  // Throws ConfigError unless the plan is usable and the last map is 6 x 6.
  void validate() const;
};

// The default channel plan at a custom number of classes.
ModelConfig reference_config(Variant variant, std::size_t num_classes = 3755);

// One 3x3 conv + BN + ReLU stage.
struct ConvUnit {
  std::string name;  // "stem.conv1", "block2.conv3", ...
  Conv2dLayer<float> conv;
  BatchNormLayer<float> bn;
};

struct ParamCount {
  std::uint64_t trainable = 0;
  std::uint64_t non_trainable = 0;
  std::uint64_t total() const { return trainable + non_trainable; }
};

struct ParamRef {
  std::string name;
  Tensor* tensor;
  bool trainable;
  bool regularized;  // included in the L2 penalty
};

struct ConstParamRef {
  std::string name;
  const Tensor* tensor;
  bool trainable;
  bool regularized;
};

class Network {
 public:
  Network() = default;

  // Random initialization: He-normal conv kernels, N(0, 0.001^2) classifier
  // weights, zero bias, BN gamma=1 beta=0 mean=0 var=1, head kernels = head_init.
  static Network build(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  std::vector<ConvUnit>& units() { return units_; }
  const std::vector<ConvUnit>& units() const { return units_; }
  PoolingHead<float>& head() { return head_; }
  const PoolingHead<float>& head() const { return head_; }
  DenseSoftmaxLayer<float>& classifier() { return classifier_; }
  const DenseSoftmaxLayer<float>& classifier() const { return classifier_; }

  // Every parameter in a fixed order: per unit kernel, bn.gamma, bn.beta,
  // bn.moving_mean, bn.moving_var; then head.kernel (B/C); then
  // classifier.weights, classifier.bias.
  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;

  ParamCount param_count() const;

 private:
  ModelConfig config_;
  std::vector<ConvUnit> units_;
  PoolingHead<float> head_;
  DenseSoftmaxLayer<float> classifier_;
};

ParamCount param_count(const Network& net);

// ---------------------------------------------------------------------------
// Forward / backward

struct UnitCache {
  BatchNormCache<float> bn;
  Tensor output;  // post-ReLU
};

struct ForwardCache {
  Tensor input;
  std::vector<UnitCache> units;
  std::vector<Tensor> pooled;  // output of each average pool, in order
  Tensor head_out;
  Tensor dropout_mask;
  Tensor classifier_in;
};

struct ForwardResult {
  Tensor logits;    // N x K
  Tensor probs;     // N x K
  Tensor features;  // last conv output F, N x 6 x 6 x C
  ForwardCache cache;  // filled only when requested
};

struct ForwardOptions {
  Mode mode = Mode::infer;
  bool zero_softmax_bias = false;
  bool keep_cache = false;
  std::uint64_t dropout_seed = 0;
};

// `batch` is N x S x S x 1. Train mode uses batch statistics, updates the BN
// moving averages and applies dropout.
ForwardResult forward(Network& net, const Tensor& batch, const ForwardOptions& options);

// Inference-only forward; never mutates the network.
ForwardResult forward(const Network& net, const Tensor& batch, bool zero_softmax_bias = false);

struct NamedTensor {
  std::string name;
  Tensor value;
};

// One gradient per trainable parameter, in parameters() order.
using Gradients = std::vector<NamedTensor>;

// Gradients of the loss whose gradient w.r.t. the logits is `grad_logits`,
// given a train-mode forward with keep_cache.
Gradients backward(const Network& net, const ForwardCache& cache, const Tensor& grad_logits);

// ---------------------------------------------------------------------------
// Checkpoints (little-endian):
//   "MNCK" u16 version=1 u8 variant u32 num_classes f32 bn_eps f32 bn_momentum
//   u32 tensor_count, then per tensor: u16 name_len, name, u8 rank,
//   rank x u32 dims, raw f32 data.

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Network& net);
Network deserialize_checkpoint(std::span<const std::uint8_t> bytes,
                               std::optional<Variant> expected = std::nullopt);

void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path,
                        std::optional<Variant> expected = std::nullopt);

}  // namespace hccr
