#include "hccr/model.hpp"

#include <cctype>
#include <cmath>

#include "hccr/random.hpp"

namespace hccr {

HeadKind head_kind(Variant variant) {
  switch (variant) {
    case Variant::A: return HeadKind::gap;
    case Variant::B: return HeadKind::gwoap;
    case Variant::C: return HeadKind::gwap;
  }
  throw ConfigError("unknown variant");
}

char to_char(Variant variant) { return static_cast<char>('A' + static_cast<int>(variant)); }

Variant parse_variant(const std::string& text) {
  if (text.size() == 1) {
    switch (std::toupper(static_cast<unsigned char>(text[0]))) {
      case 'A': return Variant::A;
      case 'B': return Variant::B;
      case 'C': return Variant::C;
      default: break;
    }
  }
  throw ConfigError("variant must be A, B or C, got '" + text + "'");
}

std::size_t ModelConfig::feature_size() const {
  std::size_t side = input_size;
  for (std::size_t i = 0; i < blocks.size(); ++i) side = AvgPoolLayer::output_extent(side);
  return side;
}

void ModelConfig::validate() const {
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  if (stem.empty()) throw ConfigError("the stem needs at least one conv layer");
  if (blocks.empty()) throw ConfigError("at least one conv block is required");
  for (std::size_t c : stem) {
    if (c == 0) throw ConfigError("stem channel counts must be positive");
  }
  for (const BlockPlan& b : blocks) {
    if (b.channels == 0 || b.bottleneck == 0) throw ConfigError("block channel counts must be positive");
  }
  if (input_size == 0 || feature_size() != 6) {
    throw ConfigError("input size " + std::to_string(input_size) + " does not reduce to 6x6 after " +
                      std::to_string(blocks.size()) + " stride-2 poolings (got " +
                      std::to_string(feature_size()) + ")");
  }
  if (!(bn_epsilon > 0.0f)) throw ConfigError("bn_epsilon must be positive");
  if (!(bn_momentum > 0.0f && bn_momentum < 1.0f)) throw ConfigError("bn_momentum must be in (0, 1)");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw ConfigError("dropout must be in [0, 1)");
  if (!std::isfinite(head_init)) throw ConfigError("head kernel init must be finite");
}

ModelConfig reference_config(Variant variant, std::size_t num_classes) {
  ModelConfig config;
  config.variant = variant;
  config.num_classes = num_classes;
  return config;
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (float& v : t.data()) v = static_cast<float>(stddev * rng.normal());
  return t;
}

}  // namespace

Network Network::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Network net;
  net.config_ = config;

  std::uint64_t stream = 0;
  auto add_unit = [&](std::string name, std::size_t in, std::size_t out) {
    const double stddev = std::sqrt(2.0 / (9.0 * static_cast<double>(in)));
    ConvUnit unit{std::move(name),
                  Conv2dLayer<float>(normal_tensor(Shape{3, 3, in, out}, stddev, mix_seed(seed, stream++))),
                  BatchNormLayer<float>(out, config.bn_epsilon, config.bn_momentum)};
    net.units_.push_back(std::move(unit));
  };

  std::size_t channels = 1;
  for (std::size_t j = 0; j < config.stem.size(); ++j) {
    add_unit("stem.conv" + std::to_string(j + 1), channels, config.stem[j]);
    channels = config.stem[j];
  }
  for (std::size_t b = 0; b < config.blocks.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b + 1) + ".conv";
    const BlockPlan& plan = config.blocks[b];
    add_unit(prefix + "1", channels, plan.channels);
    add_unit(prefix + "2", plan.channels, plan.bottleneck);
    add_unit(prefix + "3", plan.bottleneck, plan.channels);
    channels = plan.channels;
  }

  const std::size_t side = config.feature_size();
  switch (head_kind(config.variant)) {
    case HeadKind::gap: net.head_ = PoolingHead<float>::make_gap(); break;
    case HeadKind::gwoap: net.head_ = PoolingHead<float>::make_gwoap(channels, config.head_init); break;
    case HeadKind::gwap: net.head_ = PoolingHead<float>::make_gwap(side, side, channels, config.head_init); break;
  }

  net.classifier_.weights = normal_tensor(Shape{channels, config.num_classes}, 0.001, mix_seed(seed, 1000));
  net.classifier_.bias = Tensor(Shape{config.num_classes});
  return net;
}

std::vector<ParamRef> Network::parameters() {
  std::vector<ParamRef> out;
  for (ConvUnit& u : units_) {
    out.push_back({u.name + ".kernel", &u.conv.kernel, true, true});
    out.push_back({u.name + ".bn.gamma", &u.bn.gamma, true, false});
    out.push_back({u.name + ".bn.beta", &u.bn.beta, true, false});
    out.push_back({u.name + ".bn.moving_mean", &u.bn.moving_mean, false, false});
    out.push_back({u.name + ".bn.moving_var", &u.bn.moving_var, false, false});
  }
  if (!head_.kernel.empty()) out.push_back({"head.kernel", &head_.kernel, true, true});
  if (!classifier_.weights.empty()) {
    out.push_back({"classifier.weights", &classifier_.weights, true, true});
    out.push_back({"classifier.bias", &classifier_.bias, true, false});
  }
  return out;
}

std::vector<ConstParamRef> Network::parameters() const {
  std::vector<ConstParamRef> out;
  for (const ParamRef& p : const_cast<Network*>(this)->parameters()) {
    out.push_back({p.name, p.tensor, p.trainable, p.regularized});
  }
  return out;
}

ParamCount Network::param_count() const {
  ParamCount count;
  for (const ConstParamRef& p : parameters()) {
    (p.trainable ? count.trainable : count.non_trainable) += p.tensor->size();
  }
  return count;
}

ParamCount param_count(const Network& net) { return net.param_count(); }

// ---------------------------------------------------------------------------

namespace {

// Units that are preceded by an average pool: the first unit of every block.
std::vector<bool> pooled_before(const ModelConfig& config) {
  const std::size_t total = config.stem.size() + 3 * config.blocks.size();
  std::vector<bool> flags(total, false);
  for (std::size_t b = 0; b < config.blocks.size(); ++b) flags[config.stem.size() + 3 * b] = true;
  return flags;
}

void check_batch(const Network& net, const Tensor& batch) {
  const std::size_t s = net.config().input_size;
  if (batch.rank() != 4 || batch.dim(1) != s || batch.dim(2) != s || batch.dim(3) != 1) {
    throw ShapeError("forward: expected N x " + std::to_string(s) + " x " + std::to_string(s) +
                     " x 1 input, got " + shape_string(batch.shape()));
  }
  if (net.units().empty()) throw ConfigError("forward: network has no layers");
}

ForwardResult run_forward(const Network& net, Network* mutable_net, const Tensor& batch,
                          const ForwardOptions& options) {
  check_batch(net, batch);
  const bool train = options.mode == Mode::train;
  const bool keep = options.keep_cache;
  const std::vector<bool> pool_flags = pooled_before(net.config());

  ForwardResult result;
  ForwardCache& cache = result.cache;
  if (keep) {
    cache.input = batch;
    cache.units.resize(net.units().size());
  }

  Tensor x = batch;
  for (std::size_t u = 0; u < net.units().size(); ++u) {
    if (pool_flags[u]) {
      x = avgpool_forward(x);
      if (keep) cache.pooled.push_back(x);
    }
    const ConvUnit& unit = net.units()[u];
    Tensor pre = conv2d_forward(unit.conv, x);
    Tensor normed;
    if (train) {
      BatchNormCache<float> bn_cache;
      normed = batchnorm_forward(mutable_net->units()[u].bn, pre, Mode::train, keep ? &bn_cache : nullptr);
      if (keep) cache.units[u].bn = std::move(bn_cache);
    } else {
      normed = batchnorm_infer(unit.bn, pre);
    }
    pre = Tensor();
    x = relu(normed);
    if (keep) cache.units[u].output = x;
  }
  result.features = x;

  Tensor pooled = pooling_forward(net.head(), x);
  DropoutLayer<float> dropout{net.config().dropout, options.dropout_seed};
  Tensor mask;
  Tensor dropped = dropout_forward(dropout, pooled, options.mode, keep ? &mask : nullptr);
  DenseOutput<float> dense = dense_softmax_forward(net.classifier(), dropped, options.zero_softmax_bias);
  if (keep) {
    cache.head_out = std::move(pooled);
    cache.dropout_mask = std::move(mask);
    cache.classifier_in = std::move(dropped);
  }
  result.logits = std::move(dense.logits);
  result.probs = std::move(dense.probs);
  return result;
}

}  // namespace

ForwardResult forward(Network& net, const Tensor& batch, const ForwardOptions& options) {
  return run_forward(net, &net, batch, options);
}

ForwardResult forward(const Network& net, const Tensor& batch, bool zero_softmax_bias) {
  ForwardOptions options;
  options.zero_softmax_bias = zero_softmax_bias;
  return run_forward(net, nullptr, batch, options);
}

Gradients backward(const Network& net, const ForwardCache& cache, const Tensor& grad_logits) {
  const std::size_t units = net.units().size();
  if (cache.units.size() != units || cache.classifier_in.empty()) {
    throw ConfigError("backward: forward cache is missing; run forward with keep_cache");
  }
  const std::vector<bool> pool_flags = pooled_before(net.config());

  DenseGradients<float> dense = dense_backward(net.classifier(), cache.classifier_in, grad_logits);
  Tensor grad = dropout_backward(cache.dropout_mask, dense.grad_features);
  PoolingGradients<float> head = pooling_backward(net.head(), cache.units.back().output, grad);
  grad = std::move(head.grad_features);

  std::vector<Tensor> grad_kernel(units);
  std::vector<Tensor> grad_gamma(units);
  std::vector<Tensor> grad_beta(units);
  std::size_t pool_index = cache.pooled.size();
  for (std::size_t u = units; u-- > 0;) {
    const ConvUnit& unit = net.units()[u];
    grad = relu_backward(cache.units[u].output, grad);
    BatchNormGradients<float> bn = batchnorm_backward(unit.bn, cache.units[u].bn, grad);
    grad_gamma[u] = std::move(bn.grad_gamma);
    grad_beta[u] = std::move(bn.grad_beta);

    const Tensor* input = nullptr;
    if (u == 0) {
      input = pool_flags[0] ? &cache.pooled[0] : &cache.input;
    } else if (pool_flags[u]) {
      input = &cache.pooled[pool_index - 1];
    } else {
      input = &cache.units[u - 1].output;
    }
    const bool need_grad_x = u > 0;
    ConvGradients<float> conv = conv2d_backward(unit.conv, *input, bn.grad_x, need_grad_x);
    grad_kernel[u] = std::move(conv.grad_kernel);
    grad = std::move(conv.grad_x);
    if (pool_flags[u]) {
      --pool_index;
      if (u > 0) grad = avgpool_backward(cache.units[u - 1].output.shape(), grad);
    }
  }

  Gradients out;
  out.reserve(3 * units + 3);
  for (std::size_t u = 0; u < units; ++u) {
    const std::string& name = net.units()[u].name;
    out.push_back({name + ".kernel", std::move(grad_kernel[u])});
    out.push_back({name + ".bn.gamma", std::move(grad_gamma[u])});
    out.push_back({name + ".bn.beta", std::move(grad_beta[u])});
  }
  if (!head.grad_kernel.empty()) out.push_back({"head.kernel", std::move(head.grad_kernel)});
  out.push_back({"classifier.weights", std::move(dense.grad_weights)});
  out.push_back({"classifier.bias", std::move(dense.grad_bias)});
  return out;
}

}  // namespace hccr
