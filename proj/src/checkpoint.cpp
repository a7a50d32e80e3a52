#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "hccr/model.hpp"

namespace hccr {

namespace {

constexpr char kMagic[4] = {'M', 'N', 'C', 'K'};

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw FormatError(FormatErrc::truncated,
                        std::string("checkpoint ends inside ") + what, pos_);
    }
    const std::uint8_t* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8(const char* what) { return *take(1, what); }
  std::uint16_t u16(const char* what) {
    const std::uint8_t* p = take(2, what);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32(const char* what) {
    const std::uint8_t* p = take(4, what);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::size_t last_dim(const std::map<std::string, Tensor>& tensors, const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw FormatError(FormatErrc::shape_mismatch, "checkpoint is missing tensor '" + name + "'");
  }
  return it->second.dim(it->second.rank() - 1);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Network& net) {
  const ModelConfig& config = net.config();
  const std::vector<ConstParamRef> params = net.parameters();
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u16(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(config.variant));
  w.u32(static_cast<std::uint32_t>(config.num_classes));
  w.f32(config.bn_epsilon);
  w.f32(config.bn_momentum);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const ConstParamRef& p : params) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.u8(static_cast<std::uint8_t>(p.tensor->rank()));
    for (std::size_t d : p.tensor->shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : p.tensor->data()) w.f32(v);
  }
  return w.take();
}

Network deserialize_checkpoint(std::span<const std::uint8_t> bytes, std::optional<Variant> expected) {
  Reader r(bytes);
  const std::uint8_t* magic = r.take(sizeof kMagic, "magic");
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw FormatError(FormatErrc::bad_magic, "not a checkpoint (expected \"MNCK\")", 0);
  }
  const std::uint16_t version = r.u16("version");
  if (version != kCheckpointVersion) {
    throw FormatError(FormatErrc::version_mismatch,
                      "checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion),
                      4);
  }
  const std::uint8_t variant_code = r.u8("variant");
  if (variant_code > 2) {
    throw FormatError(FormatErrc::corrupt_record, "unknown variant code " + std::to_string(variant_code), 6);
  }
  const Variant variant = static_cast<Variant>(variant_code);
  if (expected && *expected != variant) {
    throw FormatError(FormatErrc::variant_mismatch,
                      std::string("checkpoint holds model ") + to_char(variant) + ", requested model " +
                          to_char(*expected),
                      6);
  }
  ModelConfig config;
  config.variant = variant;
  config.num_classes = r.u32("num_classes");
  config.bn_epsilon = r.f32("bn_eps");
  config.bn_momentum = r.f32("bn_momentum");
  const std::uint32_t count = r.u32("tensor count");

  std::map<std::string, Tensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t start = r.offset();
    const std::uint16_t name_len = r.u16("tensor name length");
    const std::uint8_t* name_bytes = r.take(name_len, "tensor name");
    std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
    const std::uint8_t rank = r.u8("tensor rank");
    if (rank == 0 || rank > kMaxRank) {
      throw FormatError(FormatErrc::shape_mismatch, "tensor '" + name + "' has rank " + std::to_string(rank), start);
    }
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u32("tensor dims");
      if (d == 0) throw FormatError(FormatErrc::shape_mismatch, "tensor '" + name + "' has a zero extent", start);
    }
    const std::size_t n = shape_size(shape);
    if (r.remaining() / 4 < n) {
      throw FormatError(FormatErrc::truncated, "checkpoint ends inside tensor '" + name + "'", r.offset());
    }
    std::vector<float> values(n);
    for (auto& v : values) v = r.f32("tensor data");
    if (!tensors.emplace(name, Tensor(std::move(shape), std::move(values))).second) {
      throw FormatError(FormatErrc::shape_mismatch, "duplicate tensor '" + name + "'", start);
    }
  }
  if (r.remaining() != 0) {
    throw FormatError(FormatErrc::corrupt_record,
                      std::to_string(r.remaining()) + " trailing bytes after the last tensor", r.offset());
  }

  // The channel plan is implied by the kernel shapes.
  config.stem.clear();
  for (std::size_t j = 1; tensors.count("stem.conv" + std::to_string(j) + ".kernel"); ++j) {
    config.stem.push_back(last_dim(tensors, "stem.conv" + std::to_string(j) + ".kernel"));
  }
  config.blocks.clear();
  for (std::size_t b = 1; tensors.count("block" + std::to_string(b) + ".conv1.kernel"); ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".conv";
    config.blocks.push_back({last_dim(tensors, prefix + "1.kernel"), last_dim(tensors, prefix + "2.kernel")});
  }
  Network net;
  try {
    net = Network::build(config, 0);
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrc::shape_mismatch, std::string("checkpoint describes an invalid model: ") + e.what());
  }
  std::size_t matched = 0;
  for (ParamRef& p : net.parameters()) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) {
      throw FormatError(FormatErrc::shape_mismatch,
                        "model " + std::string(1, to_char(variant)) + " expects tensor '" + p.name + "'");
    }
    if (it->second.shape() != p.tensor->shape()) {
      throw FormatError(FormatErrc::shape_mismatch,
                        "tensor '" + p.name + "' has shape " + shape_string(it->second.shape()) + ", model " +
                            std::string(1, to_char(variant)) + " expects " + shape_string(p.tensor->shape()));
    }
    *p.tensor = std::move(it->second);
    ++matched;
  }
  if (matched != tensors.size()) {
    throw FormatError(FormatErrc::shape_mismatch,
                      "checkpoint has tensors that model " + std::string(1, to_char(variant)) + " does not use");
  }
  for (ConvUnit& u : net.units()) {
    u.bn.epsilon = config.bn_epsilon;
    u.bn.momentum = config.bn_momentum;
  }
  return net;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = serialize_checkpoint(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Network load_checkpoint(const std::filesystem::path& path, std::optional<Variant> expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return deserialize_checkpoint(bytes, expected);
}

}  // namespace hccr
