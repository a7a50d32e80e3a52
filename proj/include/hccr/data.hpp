#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <vector>

#include "hccr/tensor.hpp"

namespace hccr {

inline constexpr std::size_t kImageSize = 96;

// ---------------------------------------------------------------------------
// CASIA GNT container. Each record, little-endian:
//   u32 record size (= 10 + width * height), 2 tag bytes (GB2312 code),
//   u16 width, u16 height, width * height bitmap bytes (255 = background).

struct GntRecord {
  std::array<std::uint8_t, 2> tag{};
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> bitmap;  // row-major, height rows of width bytes

  // The tag as a big-endian code, e.g. bytes B0 A1 -> 0xB0A1.
  std::uint16_t tag_code() const { return static_cast<std::uint16_t>(tag[0] << 8 | tag[1]); }

  friend bool operator==(const GntRecord&, const GntRecord&) = default;
};

inline constexpr std::size_t kGntHeaderSize = 10;

// Sequential decoder over a byte stream. next() returns nullopt at a clean
// end of stream. A size field that disagrees with the dimensions raises
// FormatError(corrupt_record); a stream ending inside a record raises
// FormatError(truncated). Offsets in errors are stream positions.
class GntReader {
 public:
  explicit GntReader(std::istream& in) : in_(in) {}

  std::optional<GntRecord> next();
  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

std::vector<GntRecord> parse_gnt(std::span<const std::uint8_t> bytes);
std::vector<GntRecord> read_gnt_file(const std::filesystem::path& path);

// Throws FormatError(overflow) when a dimension exceeds u16, and
// FormatError(corrupt_record) when a bitmap does not match its dimensions.
std::vector<std::uint8_t> write_gnt(std::span<const GntRecord> records);

// ---------------------------------------------------------------------------

// Bijection between tag codes and dense class indices, ordered by tag code.
class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(std::vector<std::uint16_t> tags);
  static LabelMap from_records(std::span<const GntRecord> records);

  std::size_t size() const { return tags_.size(); }
  std::size_t index_of(std::uint16_t tag) const;  // throws DataError if unknown
  std::uint16_t tag_of(std::size_t index) const;
  bool contains(std::uint16_t tag) const;
  const std::vector<std::uint16_t>& tags() const { return tags_; }

 private:
  std::vector<std::uint16_t> tags_;  // sorted, unique
};

struct Sample {
  Tensor image;  // 96 x 96 x 1, values in [0, 1], ink high
  std::size_t label = 0;
};

// Bilinear resize of a raw bitmap to 96 x 96 followed by inversion
// v -> (255 - v) / 255, so background maps to 0.
Tensor preprocess_bitmap(std::span<const std::uint8_t> bitmap, std::size_t width, std::size_t height);

Sample preprocess(const GntRecord& record, const LabelMap& labels);

// ---------------------------------------------------------------------------

struct Dataset {
  std::vector<Sample> samples;
  std::size_t num_classes = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

// Stacks the selected samples into an N x 96 x 96 x 1 batch.
Tensor stack_images(const Dataset& data, std::span<const std::size_t> indices);
std::vector<std::size_t> gather_labels(const Dataset& data, std::span<const std::size_t> indices);

struct DatasetSplit {
  Dataset train;
  Dataset validation;
};

// Per class, the last round(fraction * count) samples (in dataset order)
// become validation data.
DatasetSplit stratified_split(const Dataset& data, double validation_fraction);

// A .gnt file, or a directory whose *.gnt files are read in name order.
// Labels are densified over all tags found.
Dataset load_gnt_dataset(const std::filesystem::path& path, LabelMap* labels_out = nullptr);

// Text manifest, one "path<TAB>class" per line; paths are PGM images,
// relative ones resolved against the manifest's directory. Blank lines and
// lines starting with '#' are skipped.
Dataset load_manifest(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Deterministic synthetic glyphs for desk-scale runs. Each class is a fixed
// set of 3-6 anti-aliased line strokes; each instance applies a random
// affine jitter (scale +-5%, rotation +-5 degrees, translation +-3 px) and
// Gaussian pixel noise (sigma 0.02), clamped to [0, 1]. Samples are ordered
// class-major.

struct SynthParams {
  static constexpr std::size_t min_strokes = 3;
  static constexpr std::size_t max_strokes = 6;
  static constexpr double scale_jitter = 0.05;
  static constexpr double rotation_jitter_deg = 5.0;
  static constexpr double translation_jitter = 3.0;
  static constexpr double noise_sigma = 0.02;
  static constexpr double min_template_difference = 0.01;  // fraction of pixels
};

Dataset synth_glyphs(std::size_t num_classes, std::size_t samples_per_class, std::uint64_t seed);

// Noise-free, unjittered renderings of each class (96 x 96 x 1).
std::vector<Tensor> glyph_templates(std::size_t num_classes, std::uint64_t seed);

}  // namespace hccr
