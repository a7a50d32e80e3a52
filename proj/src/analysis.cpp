#include "hccr/analysis.hpp"

#include <numeric>

namespace hccr {

Rational::Rational(std::uint64_t num, std::uint64_t den) {
  if (den == 0) throw ConfigError("rational with zero denominator");
  const std::uint64_t g = std::gcd(num, den);
  num_ = num / (g == 0 ? 1 : g);
  den_ = den / (g == 0 ? 1 : g);
}

std::string Rational::str() const { return std::to_string(num_) + "/" + std::to_string(den_); }

namespace {

std::uint64_t output_extent(std::uint64_t in, std::uint64_t kernel, std::uint64_t pad, std::uint64_t stride) {
  if (stride == 0) throw ConfigError("stride must be positive");
  const std::uint64_t span = in + 2 * pad + stride;
  if (span < kernel) throw ConfigError("kernel larger than the padded input");
  const std::uint64_t numer = span - kernel;
  if (numer % stride != 0) {
    throw ConfigError("(" + std::to_string(in) + " + 2*" + std::to_string(pad) + " - " + std::to_string(kernel) +
                      " + " + std::to_string(stride) + ") is not divisible by stride " + std::to_string(stride));
  }
  return numer / stride;
}

std::uint64_t spatial_factor(const LayerCostSpec& spec) {
  return output_extent(spec.h, spec.r, spec.p, spec.s) * output_extent(spec.w, spec.q, spec.p, spec.s);
}

}  // namespace

std::uint64_t mac_conv(const LayerCostSpec& spec) {
  return spatial_factor(spec) * spec.r * spec.q * spec.c * spec.m;
}

std::uint64_t mac_block_plain(const LayerCostSpec& spec, std::uint64_t m) {
  const std::uint64_t f = spatial_factor(spec) * spec.r * spec.q;
  return f * spec.c * m + 2 * f * m * m;
}

std::uint64_t mac_block_bottleneck(const LayerCostSpec& spec, std::uint64_t m, std::uint64_t m_b) {
  const std::uint64_t f = spatial_factor(spec) * spec.r * spec.q;
  return f * spec.c * m + 2 * f * m_b * m;
}

Rational reduction_ratio(std::uint64_t c, std::uint64_t m, std::uint64_t m_b) {
  return Rational(c + 2 * m, c + 2 * m_b);
}

CostReport empty_cost() { return CostReport{}; }

CostReport network_cost(const ModelConfig& config) {
  config.validate();
  CostReport report;
  std::uint64_t side = config.input_size;
  std::uint64_t channels = 1;

  auto add_conv = [&](std::string name, std::uint64_t out) {
    LayerCostSpec spec;
    spec.h = spec.w = side;
    spec.c = channels;
    spec.m = out;
    LayerCost cost{std::move(name), spec, mac_conv(spec), spec.r * spec.q * spec.c * spec.m};
    report.total_macs += cost.macs;
    // BN: gamma, beta trainable; moving mean/var not.
    report.params.trainable += cost.params + 2 * out;
    report.params.non_trainable += 2 * out;
    report.layers.push_back(std::move(cost));
    channels = out;
  };

  for (std::size_t j = 0; j < config.stem.size(); ++j) add_conv("stem.conv" + std::to_string(j + 1), config.stem[j]);
  for (std::size_t b = 0; b < config.blocks.size(); ++b) {
    side = AvgPoolLayer::output_extent(side);
    const BlockPlan& plan = config.blocks[b];
    const std::string prefix = "block" + std::to_string(b + 1);
    LayerCostSpec spec;
    spec.h = spec.w = side;
    spec.c = channels;
    BlockCost block{prefix, channels, plan.channels, plan.bottleneck, side,
                    mac_block_bottleneck(spec, plan.channels, plan.bottleneck),
                    mac_block_plain(spec, plan.channels),
                    reduction_ratio(channels, plan.channels, plan.bottleneck)};
    report.blocks.push_back(block);
    add_conv(prefix + ".conv1", plan.channels);
    add_conv(prefix + ".conv2", plan.bottleneck);
    add_conv(prefix + ".conv3", plan.channels);
  }

  switch (head_kind(config.variant)) {
    case HeadKind::gap: break;
    case HeadKind::gwoap: report.params.trainable += channels; break;
    case HeadKind::gwap: report.params.trainable += side * side * channels; break;
  }

  LayerCostSpec dense;
  dense.h = dense.w = 1;
  dense.r = dense.q = 1;
  dense.p = 0;
  dense.c = channels;
  dense.m = config.num_classes;
  LayerCost classifier{"classifier", dense, channels * config.num_classes,
                       channels * config.num_classes + config.num_classes};
  report.total_macs += classifier.macs;
  report.params.trainable += classifier.params;
  report.layers.push_back(std::move(classifier));
  return report;
}

}  // namespace hccr
