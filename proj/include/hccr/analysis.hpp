#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "hccr/model.hpp"

namespace hccr {

// Exact non-negative rational, always stored in lowest terms.
class Rational {
 public:
  Rational(std::uint64_t num, std::uint64_t den);

  std::uint64_t num() const { return num_; }
  std::uint64_t den() const { return den_; }
  double value() const { return static_cast<double>(num_) / static_cast<double>(den_); }
  std::string str() const;

  friend bool operator==(const Rational&, const Rational&) = default;

 private:
  std::uint64_t num_;
  std::uint64_t den_;
};

// One convolution: input H x W x C, M kernels of R x Q, padding P, stride S.
struct LayerCostSpec {
  std::uint64_t h = 1, w = 1, c = 1;
  std::uint64_t r = 3, q = 3;
  std::uint64_t m = 1;
  std::uint64_t p = 1, s = 1;
};

// ((H+2P-R+S)/S) * ((W+2P-Q+S)/S) * R*Q*C*M. Throws ConfigError when the
// output extent is not an exact integer.
std::uint64_t mac_conv(const LayerCostSpec& spec);

// Three-layer block with M kernels everywhere: C->M then two M->M layers.
// spec.m is ignored.
std::uint64_t mac_block_plain(const LayerCostSpec& spec, std::uint64_t m);

// Block whose middle layer has M_B kernels: C->M, then 2 * (M_B*M) terms.
// spec.m is ignored.
std::uint64_t mac_block_bottleneck(const LayerCostSpec& spec, std::uint64_t m, std::uint64_t m_b);

// Plain / bottleneck block cost ratio: (C + 2M) / (C + 2M_B).
Rational reduction_ratio(std::uint64_t c, std::uint64_t m, std::uint64_t m_b);

struct LayerCost {
  std::string name;
  LayerCostSpec spec;
  std::uint64_t macs = 0;
  std::uint64_t params = 0;  // weights only (conv kernel or dense W + b)
};

struct BlockCost {
  std::string name;
  std::uint64_t in_channels = 0, channels = 0, bottleneck = 0, side = 0;
  std::uint64_t macs = 0;        // actual, with bottleneck
  std::uint64_t macs_plain = 0;  // same block without bottleneck
  Rational ratio{1, 1};
};

struct CostReport {
  std::vector<LayerCost> layers;  // conv layers and the classifier
  std::vector<BlockCost> blocks;
  std::uint64_t total_macs = 0;   // sum over layers
  ParamCount params;              // whole-network, BN moving stats non-trainable
};

// Counts conv layers and the classifier matvec; pooling, BN, ReLU and the
// global head are excluded. Parameter totals are derived from the config.
CostReport network_cost(const ModelConfig& config);

// Empty report (for a network without layers).
CostReport empty_cost();

}  // namespace hccr
