#include "hccr/cam.hpp"

#include <algorithm>
#include <cmath>

#include "hccr/image.hpp"
#include "hccr/train.hpp"

namespace hccr {

Tensor bilinear_upsample(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  return bilinear_resize(map, out_h, out_w);
}

Tensor min_max_normalize(const Tensor& map) {
  Tensor out(map.shape());
  if (map.empty()) return out;
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  const double min = *lo;
  const double range = static_cast<double>(*hi) - min;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < map.size(); ++i) {
    out[i] = static_cast<float>(std::clamp((map[i] - min) / range, 0.0, 1.0));
  }
  return out;
}

namespace {

Tensor as_batch(const Network& net, const Tensor& image) {
  const std::size_t s = net.config().input_size;
  if (image.size() != s * s || !(image.rank() == 2 || image.rank() == 3 || image.rank() == 4)) {
    throw ShapeError("compute_cam: expected a " + std::to_string(s) + "x" + std::to_string(s) + " image, got " +
                     shape_string(image.shape()));
  }
  return image.reshaped({1, s, s, 1});
}

CamResult cam_from_features(const Network& net, const Tensor& features, std::size_t k, float logit) {
  const std::size_t h = features.dim(1);
  const std::size_t w = features.dim(2);
  const std::size_t c = features.dim(3);
  const Tensor& weights = net.classifier().weights;
  const std::size_t classes = weights.dim(1);
  if (weights.dim(0) != c) throw ShapeError("compute_cam: classifier does not match the feature channels");

  // F* = kernel (.) F
  std::vector<double> scale(h * w * c, 1.0);
  const PoolingHead<float>& head = net.head();
  if (head.kind == HeadKind::gwoap) {
    for (std::size_t p = 0; p < h * w; ++p) {
      for (std::size_t m = 0; m < c; ++m) scale[p * c + m] = head.kernel[m];
    }
  } else if (head.kind == HeadKind::gwap) {
    if (head.kernel.size() != scale.size()) throw ShapeError("compute_cam: GWAP kernel does not match F");
    for (std::size_t i = 0; i < scale.size(); ++i) scale[i] = head.kernel[i];
  }

  CamResult result;
  result.predicted_class = k;
  result.logit = logit;
  result.raw_map = Tensor(Shape{h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    double acc = 0.0;
    for (std::size_t m = 0; m < c; ++m) {
      acc += static_cast<double>(weights[m * classes + k]) * scale[p * c + m] * features[p * c + m];
    }
    result.raw_map[p] = static_cast<float>(acc);
  }
  const std::size_t s = net.config().input_size;
  result.upsampled_map = bilinear_upsample(result.raw_map, s, s);
  result.normalized_map = min_max_normalize(result.upsampled_map);
  return result;
}

}  // namespace

CamResult compute_cam(const Network& net, const Tensor& image) {
  ForwardResult fwd = forward(net, as_batch(net, image), true);
  const auto row = fwd.logits.data();
  const auto best = std::max_element(row.begin(), row.end());  // first maximum wins ties
  const auto k = static_cast<std::size_t>(best - row.begin());
  return cam_from_features(net, fwd.features, k, *best);
}

CamResult compute_cam_for_class(const Network& net, const Tensor& image, std::size_t k) {
  if (k >= net.classifier().classes()) throw ConfigError("class index " + std::to_string(k) + " out of range");
  ForwardResult fwd = forward(net, as_batch(net, image), true);
  return cam_from_features(net, fwd.features, k, fwd.logits[k]);
}

GrayImage cam_image(const CamResult& cam) {
  const Tensor& norm = cam.normalized_map;
  GrayImage img{norm.dim(1), norm.dim(0), {}};
  img.pixels.reserve(norm.size());
  for (float v : norm.data()) img.pixels.push_back(to_byte(v));
  return img;
}

GrayImage overlay_image(const Tensor& image, const CamResult& cam) {
  const Tensor& norm = cam.normalized_map;
  if (image.size() != norm.size()) {
    throw ShapeError("overlay: image " + shape_string(image.shape()) + " does not match the map " +
                     shape_string(norm.shape()));
  }
  GrayImage img{norm.dim(1), norm.dim(0), {}};
  img.pixels.reserve(norm.size());
  for (std::size_t i = 0; i < norm.size(); ++i) img.pixels.push_back(to_byte(0.5f * image[i] + 0.5f * norm[i]));
  return img;
}

CamFiles emit_overlay(const Tensor& image, const CamResult& cam, const std::filesystem::path& dir,
                      const std::string& stem) {
  CamFiles files{dir / (stem + ".cam.pgm"), dir / (stem + ".overlay.pgm")};
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  write_pgm(files.cam, cam_image(cam));
  write_pgm(files.overlay, overlay_image(image, cam));
  return files;
}

BiasEffect bias_effect(const Network& net, const Dataset& data) {
  if (data.empty()) throw DataError("bias_effect: empty dataset");
  BiasEffect effect;
  effect.with_bias = evaluate(net, data, {1}, false).accuracy.at(0);
  effect.zero_bias = evaluate(net, data, {1}, true).accuracy.at(0);
  effect.drop = std::abs(effect.with_bias - effect.zero_bias);
  return effect;
}

}  // namespace hccr
