#include "doctest.h"

#include "hccr/analysis.hpp"

using namespace hccr;

namespace {

// Walks every output position and kernel tap; counts taps that land on
// real or padded input alike (the cost formula counts padded taps too).
std::uint64_t brute_conv(const LayerCostSpec& s) {
  std::uint64_t count = 0;
  const long h = static_cast<long>(s.h), w = static_cast<long>(s.w);
  const long p = static_cast<long>(s.p), st = static_cast<long>(s.s);
  for (long i = -p; i + static_cast<long>(s.r) <= h + p; i += st)
    for (long j = -p; j + static_cast<long>(s.q) <= w + p; j += st)
      for (std::uint64_t r = 0; r < s.r; ++r)
        for (std::uint64_t q = 0; q < s.q; ++q)
          for (std::uint64_t c = 0; c < s.c; ++c)
            for (std::uint64_t m = 0; m < s.m; ++m) ++count;
  return count;
}

LayerCostSpec spec(std::uint64_t h, std::uint64_t c, std::uint64_t m) {
  LayerCostSpec s;
  s.h = s.w = h;
  s.c = c;
  s.m = m;
  return s;
}

}  // namespace

TEST_CASE("mac_conv examples") {
  CHECK(mac_conv(spec(96, 1, 64)) == 5308416);
  CHECK(mac_conv(spec(6, 256, 448)) == 37158912);
  CHECK(mac_conv(spec(6, 256, 0)) == 0);
  LayerCostSpec odd = spec(5, 1, 1);
  odd.s = 2;
  odd.p = 0;
  odd.r = odd.q = 2;
  CHECK_THROWS_AS(mac_conv(odd), ConfigError);
}

TEST_CASE("mac_conv agrees with a brute-force counter") {
  for (std::uint64_t h = 1; h <= 8; ++h)
    for (std::uint64_t w = 1; w <= 8; w += 3)
      for (std::uint64_t r : {1, 3})
        for (std::uint64_t p : {0, 1}) {
          LayerCostSpec s;
          s.h = h;
          s.w = w;
          s.r = s.q = r;
          s.p = p;
          s.c = 2;
          s.m = 3;
          if (h + 2 * p < r || w + 2 * p < r) continue;
          CAPTURE(h);
          CAPTURE(w);
          CAPTURE(r);
          CHECK(mac_conv(s) == brute_conv(s));
        }
}

TEST_CASE("block costs") {
  const LayerCostSpec b4 = spec(6, 256, 0);
  CHECK(mac_block_plain(b4, 448) == 37158912 + 2 * 65028096ULL);
  CHECK(mac_block_plain(b4, 448) == 167215104);
  CHECK(mac_block_bottleneck(b4, 448, 256) == 111476736);
  CHECK(mac_block_bottleneck(b4, 448, 448) == mac_block_plain(b4, 448));
  CHECK(mac_block_bottleneck(b4, 448, 0) == mac_conv(spec(6, 256, 448)));
  CHECK(mac_block_plain(b4, 256) == 3 * mac_conv(spec(6, 256, 256)));

  LayerCostSpec pointwise;
  pointwise.h = pointwise.w = 1;
  pointwise.r = pointwise.q = 1;
  pointwise.p = 0;
  pointwise.c = 2;
  CHECK(mac_block_plain(pointwise, 4) == 40);
}

TEST_CASE("reduction ratio") {
  CHECK(reduction_ratio(256, 448, 256) == Rational(3, 2));
  CHECK(reduction_ratio(256, 448, 256).value() == 1.5);
  CHECK(reduction_ratio(128, 256, 192) == Rational(5, 4));
  CHECK(reduction_ratio(7, 9, 9) == Rational(1, 1));
  CHECK(Rational(1152, 768).str() == "3/2");
}

TEST_CASE("network cost") {
  const CostReport a = network_cost(reference_config(Variant::A));
  CHECK(a.total_macs == 1201384256);
  CHECK(network_cost(reference_config(Variant::B)).total_macs == a.total_macs);
  CHECK(network_cost(reference_config(Variant::C)).total_macs == a.total_macs);
  CHECK(a.params.total() == 6507691);
  CHECK(network_cost(reference_config(Variant::C)).params.total() == 6523819);

  // per-stage sums from an independent hand count
  std::uint64_t stage[7] = {0};
  for (const LayerCost& l : a.layers) {
    if (l.name.rfind("stem.conv1", 0) == 0) stage[0] += l.macs;
    else if (l.name.rfind("stem", 0) == 0) stage[1] += l.macs;
    else if (l.name.rfind("block1", 0) == 0) stage[2] += l.macs;
    else if (l.name.rfind("block2", 0) == 0) stage[3] += l.macs;
    else if (l.name.rfind("block3", 0) == 0) stage[4] += l.macs;
    else if (l.name.rfind("block4", 0) == 0) stage[5] += l.macs;
    else stage[6] += l.macs;
  }
  CHECK(stage[0] == 5308416);
  CHECK(stage[0] + stage[1] == 5308416 + 339738624);
  CHECK(stage[2] == 382205952);
  CHECK(stage[3] == 191102976);
  CHECK(stage[4] == 169869312);
  CHECK(stage[5] == 111476736);
  CHECK(stage[6] == 1682240);

  std::uint64_t sum = 0;
  for (const LayerCost& l : a.layers) {
    if (l.name != "classifier") CHECK(l.macs == brute_conv(l.spec));
    sum += l.macs;
  }
  CHECK(sum == a.total_macs);

  REQUIRE(a.blocks.size() == 4);
  for (const BlockCost& b : a.blocks) {
    CHECK(Rational(b.macs_plain, b.macs) == b.ratio);
    CHECK(b.ratio == reduction_ratio(b.in_channels, b.channels, b.bottleneck));
  }
  CHECK(a.blocks[3].ratio == Rational(3, 2));
  CHECK(a.blocks[2].ratio == Rational(5, 4));

  CHECK(empty_cost().total_macs == 0);
  CHECK(empty_cost().layers.empty());
}
