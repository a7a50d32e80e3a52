#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "hccr/cam.hpp"
#include "support.hpp"

using namespace hccr;
namespace fs = std::filesystem;

namespace {

Tensor random_image(Rng& rng) {
  Tensor t({96, 96, 1});
  for (float& v : t.data()) v = static_cast<float>(rng.uniform());
  return t;
}

double map_sum(const Tensor& m) {
  double s = 0;
  for (float v : m.data()) s += v;
  return s;
}

}  // namespace

TEST_CASE("bilinear upsampling") {
  const Tensor c = bilinear_upsample(Tensor({6, 6}, 0.3f), 96, 96);
  CHECK(c.shape() == Shape{96, 96});
  for (float v : c.data()) CHECK(v == doctest::Approx(0.3));
  const Tensor single = bilinear_upsample(Tensor({1, 1}, {-2.0f}), 96, 96);
  for (float v : single.data()) CHECK(v == doctest::Approx(-2.0));

  const Tensor r = bilinear_upsample(Tensor({2, 2}, {0, 1, 0, 1}), 2, 4);
  const float want[4] = {0.0f, 0.25f, 0.75f, 1.0f};
  for (std::size_t row = 0; row < 2; ++row)
    for (std::size_t j = 0; j < 4; ++j) CHECK(r[row * 4 + j] == doctest::Approx(want[j]));
}

TEST_CASE("min-max normalization") {
  const Tensor flat = min_max_normalize(Tensor({3, 3}, 5.0f));
  for (float v : flat.data()) CHECK(v == 0.0f);
  const Tensor n = min_max_normalize(Tensor({3}, {-1, 0, 3}));
  CHECK(n[0] == 0.0f);
  CHECK(n[1] == doctest::Approx(0.25));
  CHECK(n[2] == 1.0f);
}

TEST_CASE("CAM aggregates to the zero-bias logit") {
  Rng rng(31);
  for (Variant v : {Variant::A, Variant::B, Variant::C}) {
    Network net = Network::build(reference_config(v, 6), 3);
    // non-trivial head kernel and bias so both matter
    for (float& k : net.head().kernel.data()) k = static_cast<float>(rng.uniform(0.5, 1.5));
    for (float& b : net.classifier().bias.data()) b = static_cast<float>(rng.normal());
    for (int t = 0; t < 3; ++t) {
      const Tensor img = random_image(rng);
      const CamResult cam = compute_cam(net, img);
      CHECK(cam.raw_map.shape() == Shape{6, 6});
      const double agg = v == Variant::A ? map_sum(cam.raw_map) / 36 : map_sum(cam.raw_map);
      CHECK(std::abs(agg - cam.logit) <= 1e-4 * std::max(1e-6, std::abs(static_cast<double>(cam.logit))));

      const ForwardResult f = forward(net, img.reshaped({1, 96, 96, 1}), true);
      std::size_t best = 0;
      for (std::size_t k = 1; k < 6; ++k)
        if (f.logits[k] > f.logits[best]) best = k;
      CHECK(cam.predicted_class == best);
      CHECK(cam.logit == doctest::Approx(f.logits[best]).epsilon(1e-4));
    }
  }
}

TEST_CASE("CAM of a zero weight column is zero") {
  Network net = Network::build(reference_config(Variant::C, 4), 1);
  for (std::size_t c = 0; c < net.classifier().inputs(); ++c) net.classifier().weights[c * 4 + 2] = 0.0f;
  Rng rng(32);
  const CamResult cam = compute_cam_for_class(net, random_image(rng), 2);
  for (float v : cam.raw_map.data()) CHECK(v == 0.0f);
  for (float v : cam.normalized_map.data()) CHECK(v == 0.0f);
  CHECK_THROWS(compute_cam_for_class(net, random_image(rng), 4));
}

TEST_CASE("PGM emission") {
  const Network net = Network::build(reference_config(Variant::B, 3), 5);
  Rng rng(33);
  const Tensor img = random_image(rng);
  const CamResult cam = compute_cam(net, img);

  const std::vector<std::uint8_t> pgm = encode_pgm(cam_image(cam));
  const std::string header = "P5\n96 96\n255\n";
  REQUIRE(pgm.size() == header.size() + 9216);
  CHECK(std::string(pgm.begin(), pgm.begin() + static_cast<long>(header.size())) == header);
  CHECK(decode_pgm(pgm).pixels == cam_image(cam).pixels);

  const fs::path dir = fs::temp_directory_path() / "hccr_cam_test";
  fs::remove_all(dir);
  const CamFiles a = emit_overlay(img, cam, dir, "x");
  const auto first_cam = read_file(a.cam);
  const auto first_overlay = read_file(a.overlay);
  CHECK(a.cam.filename() == "x.cam.pgm");
  CHECK(a.overlay.filename() == "x.overlay.pgm");
  emit_overlay(img, compute_cam(net, img), dir, "x");
  CHECK(read_file(a.cam) == first_cam);
  CHECK(read_file(a.overlay) == first_overlay);

  // overlay = 0.5 * image + 0.5 * map
  const GrayImage ov = overlay_image(img, cam);
  for (std::size_t i = 0; i < 9216; i += 97)
    CHECK(ov.pixels[i] == to_byte(0.5f * img[i] + 0.5f * cam.normalized_map[i]));

  // constant raw map normalizes to an all-zero payload
  CamResult flat = cam;
  flat.normalized_map = min_max_normalize(Tensor({96, 96}, 1.25f));
  const GrayImage flat_pgm = cam_image(flat);
  for (std::uint8_t b : flat_pgm.pixels) CHECK(b == 0);
  fs::remove_all(dir);
}

TEST_CASE("bias effect") {
  const Dataset data = synth_glyphs(3, 2, 4);
  const Network net = Network::build(reference_config(Variant::A, 3), 1);
  const BiasEffect fresh = bias_effect(net, data);
  CHECK(fresh.drop == 0.0);
  CHECK(fresh.with_bias == fresh.zero_bias);

  Dataset one;
  one.num_classes = 3;
  one.samples.push_back(data.samples[0]);
  Network biased = net;
  biased.classifier().bias[1] = 100.0f;
  biased.classifier().bias[0] = -100.0f;
  const BiasEffect e = bias_effect(biased, one);
  CHECK((e.drop == 0.0 || e.drop == 1.0));
}
