#include "hccr/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

namespace hccr {

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;
};

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> result(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    result[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return result;
}

}  // namespace

Tensor bilinear_resize(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  if (!(map.rank() == 2 || (map.rank() == 3 && map.dim(2) == 1))) {
    throw ShapeError("bilinear_resize: expected an h x w map, got " + shape_string(map.shape()));
  }
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: target size must be positive");
  const std::size_t h = map.dim(0);
  const std::size_t w = map.dim(1);
  const std::vector<Tap> ty = taps(h, out_h);
  const std::vector<Tap> tx = taps(w, out_w);
  Tensor out(map.rank() == 2 ? Shape{out_h, out_w} : Shape{out_h, out_w, 1});
  const float* src = map.raw();
  for (std::size_t i = 0; i < out_h; ++i) {
    const Tap& y = ty[i];
    for (std::size_t j = 0; j < out_w; ++j) {
      const Tap& x = tx[j];
      const double top = src[y.lo * w + x.lo] * (1.0 - x.frac) + src[y.lo * w + x.hi] * x.frac;
      const double bottom = src[y.hi * w + x.lo] * (1.0 - x.frac) + src[y.hi * w + x.hi] * x.frac;
      out[i * out_w + j] = static_cast<float>(top * (1.0 - y.frac) + bottom * y.frac);
    }
  }
  return out;
}

std::uint8_t to_byte(float value) {
  const double scaled = std::clamp(static_cast<double>(value), 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::min(255.0, std::floor(scaled + 0.5)));
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& image) {
  if (image.pixels.size() != image.width * image.height || image.width == 0 || image.height == 0) {
    throw DataError("encode_pgm: pixel buffer does not match " + std::to_string(image.width) + "x" +
                    std::to_string(image.height));
  }
  const std::string header =
      "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  const std::vector<std::uint8_t> bytes = encode_pgm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos++] - '0');
      if (++digits > 9) throw DataError(std::string("PGM ") + what + " is too large");
    }
    if (digits == 0) throw DataError(std::string("PGM header is missing the ") + what);
    return value;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw DataError("not a binary PGM (P5) image");
  pos = 2;
  GrayImage image;
  image.width = number("width");
  image.height = number("height");
  const std::size_t maxval = number("maxval");
  if (image.width == 0 || image.height == 0) throw DataError("PGM image has a zero dimension");
  if (maxval == 0 || maxval > 255) throw DataError("only 8-bit PGM images are supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw DataError("malformed PGM header");
  ++pos;
  const std::size_t count = image.width * image.height;
  if (bytes.size() - pos < count) throw DataError("PGM pixel data is truncated");
  image.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + count));
  if (maxval != 255) {
    for (auto& p : image.pixels) {
      p = static_cast<std::uint8_t>(std::min<std::size_t>(255, (p * 255 + maxval / 2) / maxval));
    }
  }
  return image;
}

GrayImage read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return bytes;
}

}  // namespace hccr
