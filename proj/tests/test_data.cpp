#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hccr/data.hpp"
#include "hccr/image.hpp"
#include "hccr/random.hpp"

using namespace hccr;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> one_pixel_record() {
  return {11, 0, 0, 0, 0xB0, 0xA1, 1, 0, 1, 0, 0x00};
}

FormatErrc parse_error(const std::vector<std::uint8_t>& bytes) {
  try {
    parse_gnt(bytes);
  } catch (const FormatError& e) {
    return e.code();
  }
  FAIL("parse succeeded");
  return FormatErrc::bad_magic;
}

GntRecord random_record(Rng& rng) {
  GntRecord r;
  r.tag = {static_cast<std::uint8_t>(rng.below(256)), static_cast<std::uint8_t>(rng.below(256))};
  r.width = static_cast<std::uint32_t>(1 + rng.below(40));
  r.height = static_cast<std::uint32_t>(1 + rng.below(40));
  r.bitmap.resize(std::size_t{r.width} * r.height);
  for (auto& b : r.bitmap) b = static_cast<std::uint8_t>(rng.below(256));
  return r;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("GNT parsing") {
  const auto records = parse_gnt(one_pixel_record());
  REQUIRE(records.size() == 1);
  CHECK(records[0].tag_code() == 0xB0A1);
  CHECK(records[0].width == 1);
  CHECK(records[0].height == 1);
  CHECK(records[0].bitmap == std::vector<std::uint8_t>{0});
  CHECK(write_gnt(records) == one_pixel_record());

  CHECK(parse_gnt({}).empty());

  std::vector<std::uint8_t> short_bitmap{12, 0, 0, 0, 0xB0, 0xA1, 1, 0, 1, 0, 0x00};
  CHECK(parse_error(short_bitmap) == FormatErrc::corrupt_record);

  std::vector<std::uint8_t> cut = one_pixel_record();
  cut.pop_back();
  CHECK(parse_error(cut) == FormatErrc::truncated);
  std::vector<std::uint8_t> two = one_pixel_record();
  two.insert(two.end(), {11, 0, 0});
  CHECK(parse_error(two) == FormatErrc::truncated);

  std::vector<std::uint8_t> zero_width{10, 0, 0, 0, 0xB0, 0xA1, 0, 0, 1, 0};
  CHECK(parse_error(zero_width) == FormatErrc::corrupt_record);
}

TEST_CASE("GNT errors carry byte offsets") {
  std::vector<std::uint8_t> bytes = one_pixel_record();
  const auto bad = std::vector<std::uint8_t>{13, 0, 0, 0, 0xB0, 0xA2, 1, 0, 1, 0, 0x00};
  bytes.insert(bytes.end(), bad.begin(), bad.end());
  try {
    parse_gnt(bytes);
    FAIL("parse succeeded");
  } catch (const FormatError& e) {
    CHECK(e.code() == FormatErrc::corrupt_record);
    CHECK(e.offset() == 11);
  }
}

TEST_CASE("GNT write/parse round-trip") {
  Rng rng(21);
  std::vector<GntRecord> records;
  for (int i = 0; i < 200; ++i) records.push_back(random_record(rng));
  CHECK(parse_gnt(write_gnt(records)) == records);
  CHECK(write_gnt(std::vector<GntRecord>{}).empty());

  GntRecord wide;
  wide.width = 65535;
  wide.height = 1;
  wide.bitmap.assign(65535, 7);
  CHECK(parse_gnt(write_gnt(std::vector<GntRecord>{wide}))[0] == wide);
  wide.width = 65536;
  wide.bitmap.assign(65536, 7);
  try {
    write_gnt(std::vector<GntRecord>{wide});
    FAIL("no overflow");
  } catch (const FormatError& e) {
    CHECK(e.code() == FormatErrc::overflow);
  }
  GntRecord mismatched = records[0];
  mismatched.bitmap.pop_back();
  CHECK_THROWS_AS(write_gnt(std::vector<GntRecord>{mismatched}), FormatError);
}

TEST_CASE("label map") {
  const LabelMap m({0xB0A3, 0xB0A1, 0xB0A3, 0xB0A2});
  CHECK(m.size() == 3);
  CHECK(m.index_of(0xB0A1) == 0);
  CHECK(m.index_of(0xB0A3) == 2);
  CHECK(m.tag_of(1) == 0xB0A2);
  CHECK(!m.contains(0x1234));
  CHECK_THROWS_AS(m.index_of(0x1234), DataError);
}

TEST_CASE("preprocessing") {
  const std::vector<std::uint8_t> white(30 * 20, 255);
  const Tensor blank = preprocess_bitmap(white, 30, 20);
  for (float v : blank.data()) CHECK(v == 0.0f);
  const std::vector<std::uint8_t> ink(17 * 50, 0);
  const Tensor dark = preprocess_bitmap(ink, 17, 50);
  for (float v : dark.data()) CHECK(v == doctest::Approx(1.0));

  Rng rng(22);
  std::vector<std::uint8_t> full(96 * 96);
  for (auto& b : full) b = static_cast<std::uint8_t>(rng.below(256));
  const Tensor t = preprocess_bitmap(full, 96, 96);
  CHECK(t.shape() == Shape{96, 96, 1});
  for (std::size_t i = 0; i < full.size(); ++i) CHECK(t[i] == doctest::Approx((255.0 - full[i]) / 255.0));

  CHECK_THROWS(preprocess_bitmap(full, 10, 10));
}

TEST_CASE("stratified split") {
  Dataset d;
  d.num_classes = 2;
  for (std::size_t i = 0; i < 10; ++i) d.samples.push_back({Tensor({96, 96, 1}, static_cast<float>(i)), i % 2});
  const DatasetSplit s = stratified_split(d, 0.2);
  CHECK(s.train.size() == 8);
  CHECK(s.validation.size() == 2);
  CHECK(s.validation.samples[0].image[0] == 8.0f);
  CHECK(s.validation.samples[1].image[0] == 9.0f);
  CHECK(s.train.num_classes == 2);
  CHECK(stratified_split(d, 0.0).validation.empty());
  CHECK_THROWS_AS(stratified_split(d, 1.0), ConfigError);

  const std::vector<std::size_t> idx{3, 0};
  CHECK(stack_images(d, idx).shape() == Shape{2, 96, 96, 1});
  CHECK(gather_labels(d, idx) == std::vector<std::size_t>{1, 0});
}

TEST_CASE("loading GNT files and directories") {
  TempDir dir("hccr_data_gnt");
  Rng rng(23);
  std::vector<GntRecord> a{random_record(rng), random_record(rng)};
  std::vector<GntRecord> b{random_record(rng)};
  a[0].tag = {0xB0, 0xA2};
  a[1].tag = {0xB0, 0xA1};
  b[0].tag = {0xB0, 0xA2};
  write_bytes(dir.path / "1.gnt", write_gnt(a));
  write_bytes(dir.path / "2.gnt", write_gnt(b));
  write_bytes(dir.path / "notes.txt", {1, 2, 3});

  LabelMap labels;
  const Dataset all = load_gnt_dataset(dir.path, &labels);
  CHECK(all.size() == 3);
  CHECK(all.num_classes == 2);
  CHECK(labels.tag_of(0) == 0xB0A1);
  CHECK(all.samples[0].label == 1);
  CHECK(all.samples[1].label == 0);
  CHECK(load_gnt_dataset(dir.path / "2.gnt").size() == 1);
  CHECK_THROWS_AS(load_gnt_dataset(dir.path / "missing.gnt"), Error);

  std::vector<std::uint8_t> broken = write_gnt(b);
  broken.pop_back();
  write_bytes(dir.path / "3.gnt", broken);
  CHECK_THROWS_AS(load_gnt_dataset(dir.path), FormatError);
}

TEST_CASE("manifest of PGM images") {
  TempDir dir("hccr_data_manifest");
  fs::create_directories(dir.path / "img");
  GrayImage img{4, 3, std::vector<std::uint8_t>(12, 255)};
  img.pixels[5] = 0;
  write_pgm(dir.path / "img" / "a.pgm", img);
  write_pgm(dir.path / "img" / "b.pgm", GrayImage{2, 2, std::vector<std::uint8_t>(4, 0)});
  {
    std::ofstream m(dir.path / "list.txt");
    m << "# comment\n\nimg/a.pgm\t1\nimg/b.pgm\t0\n";
  }
  const Dataset d = load_manifest(dir.path / "list.txt");
  REQUIRE(d.size() == 2);
  CHECK(d.num_classes == 2);
  CHECK(d.samples[0].label == 1);
  for (float v : d.samples[1].image.data()) CHECK(v == doctest::Approx(1.0));
  {
    std::ofstream m(dir.path / "bad.txt");
    m << "img/missing.pgm\t0\n";
  }
  CHECK_THROWS_AS(load_manifest(dir.path / "bad.txt"), DataError);
  {
    std::ofstream m(dir.path / "bad2.txt");
    m << "img/a.pgm\n";
  }
  CHECK_THROWS_AS(load_manifest(dir.path / "bad2.txt"), DataError);
}

TEST_CASE("synthetic glyphs") {
  const Dataset a = synth_glyphs(4, 3, 7);
  const Dataset b = synth_glyphs(4, 3, 7);
  REQUIRE(a.size() == 12);
  CHECK(a.num_classes == 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples[i].image == b.samples[i].image);
    CHECK(a.samples[i].label == i / 3);
    CHECK(a.samples[i].image.shape() == Shape{96, 96, 1});
    for (float v : a.samples[i].image.data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  CHECK(synth_glyphs(4, 3, 8).samples[0].image != a.samples[0].image);
  CHECK(a.samples[0].image != a.samples[1].image);

  const std::vector<Tensor> t = glyph_templates(10, 7);
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = i + 1; j < t.size(); ++j) {
      std::size_t diff = 0;
      for (std::size_t p = 0; p < 9216; ++p) diff += (t[i][p] >= 0.5f) != (t[j][p] >= 0.5f);
      CHECK(static_cast<double>(diff) / 9216 >= 0.01);
    }
  CHECK_THROWS_AS(synth_glyphs(1, 3, 7), ConfigError);
}
