#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cdvae {

enum class ErrorKind {
  kShape,     // dimension / length mismatch
  kCapacity,  // enumeration or codebook limits
  kDomain,    // argument outside its mathematical domain
  kNumeric,   // non-finite intermediate or loss
  kParse,     // malformed file contents
  kConfig,    // invalid or unknown configuration
  kState,     // API misuse (e.g. reusing a consumed tape)
  kIo,        // missing or unreadable file
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorKind::kShape, w) {}
};
struct CapacityError : Error {
  explicit CapacityError(const std::string& w) : Error(ErrorKind::kCapacity, w) {}
};
struct DomainError : Error {
  explicit DomainError(const std::string& w) : Error(ErrorKind::kDomain, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::kNumeric, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::kConfig, w) {}
};
struct StateError : Error {
  explicit StateError(const std::string& w) : Error(ErrorKind::kState, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::kIo, w) {}
};

/// Parse failure carrying the byte offset at which the input went wrong.
class ParseError : public Error {
 public:
  ParseError(const std::string& w, std::size_t offset)
      : Error(ErrorKind::kParse, w + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

inline void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": length " + std::to_string(a) + " != " + std::to_string(b));
  }
}

}  // namespace cdvae
