#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

// Bad configuration (file syntax, unknown key, out-of-range value). CLI exit 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ParamSet does not match the expected architecture (names, order or dims).
struct ArchMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Peer violated the exchange protocol (mixed rounds, duplicate client id, ...).
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Not every expected client update arrived before the round deadline.
struct RoundTimeoutError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotFoundError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EncodeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class DecodeError : public std::runtime_error {
 public:
  enum class Kind {
    kBadMagic,
    kBadVersion,
    kBadDtype,
    kBadType,
    kBadShape,
    kTruncated,
    kTrailingBytes,
    kBadCrc,
  };

  DecodeError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace fedsim
