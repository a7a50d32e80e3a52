#include "hccr/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "hccr/image.hpp"

namespace hccr {

namespace {

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

std::size_t read_some(std::istream& in, unsigned char* dst, std::size_t n) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount());
}

class SpanBuf : public std::streambuf {
 public:
  explicit SpanBuf(std::span<const std::uint8_t> bytes) {
    char* base = const_cast<char*>(reinterpret_cast<const char*>(bytes.data()));
    setg(base, base, base + bytes.size());
  }
};

}  // namespace

std::optional<GntRecord> GntReader::next() {
  unsigned char header[kGntHeaderSize];
  const std::uint64_t start = offset_;
  const std::size_t got = read_some(in_, header, kGntHeaderSize);
  if (got == 0) return std::nullopt;
  offset_ += got;
  if (got < kGntHeaderSize) {
    throw FormatError(FormatErrc::truncated, "record header cut short at byte " + std::to_string(start), start);
  }
  GntRecord record;
  const std::uint32_t size = get_u32(header);
  record.tag = {header[4], header[5]};
  record.width = get_u16(header + 6);
  record.height = get_u16(header + 8);
  const std::uint64_t pixels = static_cast<std::uint64_t>(record.width) * record.height;
  if (record.width == 0 || record.height == 0 || size != kGntHeaderSize + pixels) {
    throw FormatError(FormatErrc::corrupt_record,
                      "record at byte " + std::to_string(start) + " declares size " + std::to_string(size) +
                          " for a " + std::to_string(record.width) + "x" + std::to_string(record.height) +
                          " bitmap",
                      start);
  }
  record.bitmap.resize(pixels);
  const std::size_t body = read_some(in_, record.bitmap.data(), pixels);
  offset_ += body;
  if (body < pixels) {
    throw FormatError(FormatErrc::truncated,
                      "record at byte " + std::to_string(start) + " ends after " + std::to_string(body) + " of " +
                          std::to_string(pixels) + " bitmap bytes",
                      start);
  }
  return record;
}

std::vector<GntRecord> parse_gnt(std::span<const std::uint8_t> bytes) {
  SpanBuf buf(bytes);
  std::istream in(&buf);
  GntReader reader(in);
  std::vector<GntRecord> records;
  while (auto r = reader.next()) records.push_back(std::move(*r));
  return records;
}

std::vector<GntRecord> read_gnt_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  GntReader reader(in);
  std::vector<GntRecord> records;
  try {
    while (auto r = reader.next()) records.push_back(std::move(*r));
  } catch (const FormatError& e) {
    throw FormatError(e.code(), path.string() + ": " + e.what(), e.offset());
  }
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return records;
}

std::vector<std::uint8_t> write_gnt(std::span<const GntRecord> records) {
  std::vector<std::uint8_t> out;
  for (const GntRecord& r : records) {
    if (r.width > 0xFFFF || r.height > 0xFFFF) {
      throw FormatError(FormatErrc::overflow, "bitmap " + std::to_string(r.width) + "x" +
                                                  std::to_string(r.height) + " exceeds 65535 per side");
    }
    const std::uint64_t pixels = static_cast<std::uint64_t>(r.width) * r.height;
    if (r.width == 0 || r.height == 0 || r.bitmap.size() != pixels) {
      throw FormatError(FormatErrc::corrupt_record, "bitmap length " + std::to_string(r.bitmap.size()) +
                                                        " does not match " + std::to_string(r.width) + "x" +
                                                        std::to_string(r.height));
    }
    const std::uint64_t size = kGntHeaderSize + pixels;
    if (size > 0xFFFFFFFFull) throw FormatError(FormatErrc::overflow, "record size exceeds 32 bits");
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(size >> (8 * i)));
    out.push_back(r.tag[0]);
    out.push_back(r.tag[1]);
    out.push_back(static_cast<std::uint8_t>(r.width & 0xFF));
    out.push_back(static_cast<std::uint8_t>(r.width >> 8));
    out.push_back(static_cast<std::uint8_t>(r.height & 0xFF));
    out.push_back(static_cast<std::uint8_t>(r.height >> 8));
    out.insert(out.end(), r.bitmap.begin(), r.bitmap.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

LabelMap::LabelMap(std::vector<std::uint16_t> tags) : tags_(std::move(tags)) {
  std::sort(tags_.begin(), tags_.end());
  tags_.erase(std::unique(tags_.begin(), tags_.end()), tags_.end());
}

LabelMap LabelMap::from_records(std::span<const GntRecord> records) {
  std::vector<std::uint16_t> tags;
  tags.reserve(records.size());
  for (const auto& r : records) tags.push_back(r.tag_code());
  return LabelMap(std::move(tags));
}

bool LabelMap::contains(std::uint16_t tag) const { return std::binary_search(tags_.begin(), tags_.end(), tag); }

std::size_t LabelMap::index_of(std::uint16_t tag) const {
  auto it = std::lower_bound(tags_.begin(), tags_.end(), tag);
  if (it == tags_.end() || *it != tag) {
    std::ostringstream msg;
    msg << "unknown tag code 0x" << std::hex << tag;
    throw DataError(msg.str());
  }
  return static_cast<std::size_t>(it - tags_.begin());
}

std::uint16_t LabelMap::tag_of(std::size_t index) const {
  if (index >= tags_.size()) throw DataError("class index " + std::to_string(index) + " out of range");
  return tags_[index];
}

Tensor preprocess_bitmap(std::span<const std::uint8_t> bitmap, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0 || bitmap.size() != width * height) {
    throw DataError("bitmap length " + std::to_string(bitmap.size()) + " does not match " + std::to_string(width) +
                    "x" + std::to_string(height));
  }
  Tensor raw(Shape{height, width});
  for (std::size_t i = 0; i < bitmap.size(); ++i) raw[i] = static_cast<float>(bitmap[i]);
  Tensor resized = bilinear_resize(raw, kImageSize, kImageSize);
  for (float& v : resized.data()) v = std::clamp((255.0f - v) / 255.0f, 0.0f, 1.0f);
  return std::move(resized).reshaped({kImageSize, kImageSize, 1});
}

Sample preprocess(const GntRecord& record, const LabelMap& labels) {
  const std::size_t label = labels.index_of(record.tag_code());
  return Sample{preprocess_bitmap(record.bitmap, record.width, record.height), label};
}

// ---------------------------------------------------------------------------

Tensor stack_images(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("cannot stack an empty selection");
  constexpr std::size_t pixels = kImageSize * kImageSize;
  Tensor batch(Shape{indices.size(), kImageSize, kImageSize, 1});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = data.samples.at(indices[i]).image;
    if (img.size() != pixels) throw ShapeError("sample image must be 96x96x1, got " + shape_string(img.shape()));
    std::copy(img.raw(), img.raw() + pixels, batch.raw() + i * pixels);
  }
  return batch;
}

std::vector<std::size_t> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<std::size_t> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) labels.push_back(data.samples.at(i).label);
  return labels;
}

DatasetSplit stratified_split(const Dataset& data, double validation_fraction) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation fraction must be in [0, 1)");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.samples.size(); ++i) by_class[data.samples[i].label].push_back(i);
  std::vector<bool> to_val(data.samples.size(), false);
  for (const auto& [label, members] : by_class) {
    const auto count = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(members.size())));
    for (std::size_t j = members.size() - std::min(count, members.size()); j < members.size(); ++j) {
      to_val[members[j]] = true;
    }
  }
  DatasetSplit split;
  split.train.num_classes = split.validation.num_classes = data.num_classes;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    (to_val[i] ? split.validation : split.train).samples.push_back(data.samples[i]);
  }
  return split;
}

Dataset load_gnt_dataset(const std::filesystem::path& path, LabelMap* labels_out) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  std::error_code ec;
  if (fs::is_directory(path, ec)) {
    for (const auto& entry : fs::directory_iterator(path, ec)) {
      if (entry.is_regular_file() && entry.path().extension() == ".gnt") files.push_back(entry.path());
    }
    if (ec) throw IoError("cannot list '" + path.string() + "': " + ec.message());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .gnt files in '" + path.string() + "'");
  } else if (fs::exists(path, ec)) {
    files.push_back(path);
  } else {
    throw DataError("data path '" + path.string() + "' does not exist");
  }

  std::vector<GntRecord> records;
  for (const auto& f : files) {
    auto part = read_gnt_file(f);
    records.insert(records.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  if (records.empty()) throw DataError("no records found under '" + path.string() + "'");
  LabelMap labels = LabelMap::from_records(records);
  Dataset data;
  data.num_classes = labels.size();
  data.samples.reserve(records.size());
  for (const auto& r : records) data.samples.push_back(preprocess(r, labels));
  if (labels_out) *labels_out = std::move(labels);
  return data;
}

Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  const std::filesystem::path base = path.parent_path();
  Dataset data;
  std::string line;
  std::size_t line_no = 0;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 'path<TAB>class'");
    }
    const std::string cls = line.substr(tab + 1);
    if (!std::all_of(cls.begin(), cls.end(), [](unsigned char c) { return std::isdigit(c); }) || cls.size() > 9) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": class '" + cls + "' is not an index");
    }
    std::filesystem::path image_path = line.substr(0, tab);
    if (image_path.is_relative()) image_path = base / image_path;
    GrayImage img;
    try {
      img = read_pgm(image_path);
    } catch (const IoError& e) {
      throw DataError(e.what());
    }
    const std::size_t label = std::stoul(cls);
    max_label = std::max(max_label, label);
    data.samples.push_back(Sample{preprocess_bitmap(img.pixels, img.width, img.height), label});
  }
  if (data.samples.empty()) throw DataError("manifest '" + path.string() + "' lists no samples");
  data.num_classes = max_label + 1;
  return data;
}

}  // namespace hccr
