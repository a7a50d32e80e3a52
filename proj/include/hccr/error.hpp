#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hccr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or layer operands with incompatible shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid model, training or command configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dataset-level problems: unknown labels, empty datasets, bad images.
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

enum class FormatErrc {
  bad_magic,
  version_mismatch,
  truncated,
  shape_mismatch,
  variant_mismatch,
  corrupt_record,
  overflow,
};

const char* to_string(FormatErrc code);

// Binary container errors (checkpoints and GNT files). `offset` is the byte
// position where decoding failed, when known.
class FormatError : public Error {
 public:
  FormatError(FormatErrc code, const std::string& what, std::uint64_t offset = 0)
      : Error(std::string(to_string(code)) + ": " + what), code_(code), offset_(offset) {}

  FormatErrc code() const noexcept { return code_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  FormatErrc code_;
  std::uint64_t offset_;
};

inline const char* to_string(FormatErrc code) {
  switch (code) {
    case FormatErrc::bad_magic: return "bad magic";
    case FormatErrc::version_mismatch: return "version mismatch";
    case FormatErrc::truncated: return "truncated file";
    case FormatErrc::shape_mismatch: return "shape mismatch";
    case FormatErrc::variant_mismatch: return "variant mismatch";
    case FormatErrc::corrupt_record: return "corrupt record";
    case FormatErrc::overflow: return "dimension overflow";
  }
  return "format error";
}

}  // namespace hccr
