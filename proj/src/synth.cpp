#include <algorithm>
#include <cmath>
#include <numbers>

#include "hccr/data.hpp"
#include "hccr/random.hpp"

namespace hccr {

namespace {

struct Stroke {
  double x0, y0, x1, y1;
  double thickness;
};

using Glyph = std::vector<Stroke>;

constexpr double kCenter = 48.0;
constexpr double kMinCoord = 18.0;
constexpr double kMaxCoord = 78.0;
constexpr double kMinLength = 20.0;

double segment_distance(double px, double py, const Stroke& s) {
  const double dx = s.x1 - s.x0;
  const double dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = px - (s.x0 + t * dx);
  const double ey = py - (s.y0 + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

// Coverage falls off linearly over one pixel at the stroke edge.
void render(const Glyph& glyph, Tensor& out) {
  out.fill(0.0f);
  for (std::size_t y = 0; y < kImageSize; ++y) {
    for (std::size_t x = 0; x < kImageSize; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      double ink = 0.0;
      for (const Stroke& s : glyph) {
        const double d = segment_distance(px, py, s);
        ink = std::max(ink, std::clamp(s.thickness / 2.0 + 0.5 - d, 0.0, 1.0));
      }
      out[y * kImageSize + x] = static_cast<float>(ink);
    }
  }
}

Glyph random_glyph(Rng& rng) {
  const std::size_t count =
      SynthParams::min_strokes + rng.below(SynthParams::max_strokes - SynthParams::min_strokes + 1);
  Glyph glyph;
  while (glyph.size() < count) {
    Stroke s{rng.uniform(kMinCoord, kMaxCoord), rng.uniform(kMinCoord, kMaxCoord),
             rng.uniform(kMinCoord, kMaxCoord), rng.uniform(kMinCoord, kMaxCoord), 4.0 + 2.0 * rng.uniform()};
    if (std::hypot(s.x1 - s.x0, s.y1 - s.y0) >= kMinLength) glyph.push_back(s);
  }
  return glyph;
}

double differing_fraction(const Tensor& a, const Tensor& b) {
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] >= 0.5f) != (b[i] >= 0.5f)) ++diff;
  }
  return static_cast<double>(diff) / static_cast<double>(a.size());
}

struct Templates {
  std::vector<Glyph> glyphs;
  std::vector<Tensor> images;
};

Templates make_templates(std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("synthetic glyphs need at least 2 classes");
  Rng rng(mix_seed(seed, 0x6c79));
  Templates t;
  Tensor img(Shape{kImageSize, kImageSize, 1});
  while (t.glyphs.size() < num_classes) {
    Glyph g = random_glyph(rng);
    render(g, img);
    const bool distinct = std::all_of(t.images.begin(), t.images.end(), [&](const Tensor& other) {
      return differing_fraction(img, other) >= SynthParams::min_template_difference;
    });
    if (!distinct) continue;
    t.glyphs.push_back(std::move(g));
    t.images.push_back(img);
  }
  return t;
}

Glyph jitter(const Glyph& glyph, Rng& rng) {
  const double scale = 1.0 + rng.uniform(-SynthParams::scale_jitter, SynthParams::scale_jitter);
  const double angle = rng.uniform(-SynthParams::rotation_jitter_deg, SynthParams::rotation_jitter_deg) *
                       std::numbers::pi / 180.0;
  const double tx = rng.uniform(-SynthParams::translation_jitter, SynthParams::translation_jitter);
  const double ty = rng.uniform(-SynthParams::translation_jitter, SynthParams::translation_jitter);
  const double c = std::cos(angle) * scale;
  const double s = std::sin(angle) * scale;
  auto map = [&](double x, double y, double& ox, double& oy) {
    const double dx = x - kCenter;
    const double dy = y - kCenter;
    ox = kCenter + c * dx - s * dy + tx;
    oy = kCenter + s * dx + c * dy + ty;
  };
  Glyph out = glyph;
  for (Stroke& st : out) {
    map(st.x0, st.y0, st.x0, st.y0);
    map(st.x1, st.y1, st.x1, st.y1);
    st.thickness *= scale;
  }
  return out;
}

}  // namespace

std::vector<Tensor> glyph_templates(std::size_t num_classes, std::uint64_t seed) {
  return make_templates(num_classes, seed).images;
}

Dataset synth_glyphs(std::size_t num_classes, std::size_t samples_per_class, std::uint64_t seed) {
  const Templates templates = make_templates(num_classes, seed);
  Dataset data;
  data.num_classes = num_classes;
  data.samples.reserve(num_classes * samples_per_class);
  for (std::size_t k = 0; k < num_classes; ++k) {
    Rng rng(mix_seed(seed, 0x10000 + k));
    for (std::size_t i = 0; i < samples_per_class; ++i) {
      Tensor img(Shape{kImageSize, kImageSize, 1});
      render(jitter(templates.glyphs[k], rng), img);
      for (float& v : img.data()) {
        v = static_cast<float>(std::clamp(v + SynthParams::noise_sigma * rng.normal(), 0.0, 1.0));
      }
      data.samples.push_back(Sample{std::move(img), k});
    }
  }
  return data;
}

}  // namespace hccr
