#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hccr/tensor.hpp"

namespace hccr {

// Bilinear resampling of an h x w map (rank 2, or rank 3 with one channel)
// to out_h x out_w, half-pixel centers (align_corners = false): source
// coordinate (i + 0.5) * h / out_h - 0.5, clamped to the valid range.
// The result has the input's rank.
Tensor bilinear_resize(const Tensor& map, std::size_t out_h, std::size_t out_w);

// 8-bit grayscale raster, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

// Maps [0, 1] to [0, 255] with round-half-up; out-of-range values clamp.
std::uint8_t to_byte(float value);

// Binary PGM: "P5\n<w> <h>\n255\n" followed by the raw pixels.
std::vector<std::uint8_t> encode_pgm(const GrayImage& image);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

// Reads binary (P5) PGM with maxval <= 255; comments are allowed in the
// header. Throws DataError on malformed input, IoError when unreadable.
GrayImage decode_pgm(std::span<const std::uint8_t> bytes);
GrayImage read_pgm(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace hccr
