#pragma once

#include <filesystem>
#include <string>

#include "hccr/data.hpp"
#include "hccr/image.hpp"
#include "hccr/model.hpp"

namespace hccr {

struct CamResult {
  std::size_t predicted_class = 0;
  float logit = 0.0f;   // zero-bias logit of predicted_class
  Tensor raw_map;       // H x W of the last feature map, signed
  Tensor upsampled_map; // 96 x 96
  Tensor normalized_map;  // 96 x 96, min-max scaled to [0, 1]
};

// Same half-pixel bilinear rule as image resizing.
Tensor bilinear_upsample(const Tensor& map, std::size_t out_h, std::size_t out_w);

// (m - min) / (max - min); a constant map becomes all zeros.
Tensor min_max_normalize(const Tensor& map);

// Class activation map of the predicted class. The softmax bias is ignored
// for the prediction. For the weighted heads the feature map is first
// multiplied by the head kernel (broadcast over space for GWOAP).
// Summing raw_map (GWOAP/GWAP) or averaging it (GAP) gives `logit`.
CamResult compute_cam(const Network& net, const Tensor& image);

// Same, for a chosen class instead of the prediction.
CamResult compute_cam_for_class(const Network& net, const Tensor& image, std::size_t k);

struct CamFiles {
  std::filesystem::path cam;
  std::filesystem::path overlay;
};

// The PGM payloads: normalized map, and 0.5 * input + 0.5 * normalized map.
GrayImage cam_image(const CamResult& cam);
GrayImage overlay_image(const Tensor& image, const CamResult& cam);

// Writes <dir>/<stem>.cam.pgm and <dir>/<stem>.overlay.pgm.
CamFiles emit_overlay(const Tensor& image, const CamResult& cam, const std::filesystem::path& dir,
                      const std::string& stem);

struct BiasEffect {
  double with_bias = 0.0;
  double zero_bias = 0.0;
  double drop = 0.0;  // |with_bias - zero_bias|, as a fraction
};

BiasEffect bias_effect(const Network& net, const Dataset& data);

}  // namespace hccr
