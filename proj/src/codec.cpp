#include "fedsim/codec.hpp"

#include <array>
#include <bit>
#include <cstring>

#include "fedsim/errors.hpp"

namespace fedsim {

namespace {

constexpr std::array<uint32_t, 256> make_crc_table() {
  std::array<uint32_t, 256> table{};
  for (uint32_t i = 0; i < 256; ++i) {
    uint32_t c = i;
    for (int k = 0; k < 8; ++k)
      c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

constexpr auto kCrcTable = make_crc_table();

constexpr char kMagic[4] = {'F', 'E', 'D', 'W'};
constexpr uint16_t kVersion = 1;

class Writer {
 public:
  explicit Writer(size_t reserve) { buf_.reserve(reserve); }

  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) {
    buf_.push_back(v & 0xFF);
    buf_.push_back(v >> 8);
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back((v >> (8 * i)) & 0xFF);
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back((v >> (8 * i)) & 0xFF);
  }
  void f32(float v) {
    u32(std::bit_cast<uint32_t>(v));
  }
  void f64(double v) {
    u64(std::bit_cast<uint64_t>(v));
  }
  void bytes(const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }

  std::vector<uint8_t>& buffer() { return buf_; }

 private:
  std::vector<uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

  uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = bytes_[pos_] | (uint16_t(bytes_[pos_ + 1]) << 8);
    pos_ += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  size_t pos() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }

  void need(size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw DecodeError(DecodeError::Kind::kTruncated, "blob truncated");
  }

 private:
  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
};

size_t element_size(WireDtype dtype) {
  return dtype == WireDtype::kF32 ? 4 : 8;
}

}  // namespace

uint32_t crc32(std::span<const uint8_t> bytes) {
  uint32_t c = 0xFFFFFFFFu;
  for (uint8_t b : bytes) c = kCrcTable[(c ^ b) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

size_t encoded_size(const ParamSet& params, WireDtype dtype) {
  size_t n = 4 + 2 + 1 + 4 + 4;  // magic, version, dtype, entry count, crc
  for (const auto& e : params.entries)
    n += 2 + e.name.size() + 1 + 4 * e.tensor.dims.size() +
         element_size(dtype) * e.tensor.size();
  return n;
}

std::vector<uint8_t> encode_params(const ParamSet& params, WireDtype dtype) {
  Writer w(encoded_size(params, dtype));
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u8(static_cast<uint8_t>(dtype));
  w.u32(static_cast<uint32_t>(params.entries.size()));
  for (const auto& e : params.entries) {
    if (e.name.size() > 0xFFFF)
      throw EncodeError("entry name longer than 65535 bytes: " +
                        e.name.substr(0, 32) + "...");
    w.u16(static_cast<uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u8(static_cast<uint8_t>(e.tensor.dims.size()));
    for (uint32_t d : e.tensor.dims) w.u32(d);
    if (dtype == WireDtype::kF32)
      for (double v : e.tensor.data) w.f32(static_cast<float>(v));
    else
      for (double v : e.tensor.data) w.f64(v);
  }
  w.u32(crc32(w.buffer()));
  return std::move(w.buffer());
}

ParamSet decode_params(std::span<const uint8_t> blob) {
  Reader r(blob);
  r.need(4);
  if (std::memcmp(blob.data(), kMagic, 4) != 0)
    throw DecodeError(DecodeError::Kind::kBadMagic, "bad blob magic");
  r.str(4);
  if (r.u16() != kVersion)
    throw DecodeError(DecodeError::Kind::kBadVersion, "unsupported blob version");
  uint8_t dtype_raw = r.u8();
  if (dtype_raw > 1)
    throw DecodeError(DecodeError::Kind::kBadDtype, "unknown blob dtype");
  WireDtype dtype = static_cast<WireDtype>(dtype_raw);
  uint32_t entry_count = r.u32();

  ParamSet out;
  for (uint32_t i = 0; i < entry_count; ++i) {
    uint16_t name_len = r.u16();
    std::string name = r.str(name_len);
    uint8_t ndim = r.u8();
    std::vector<uint32_t> dims(ndim);
    size_t volume = 1;
    for (uint8_t d = 0; d < ndim; ++d) {
      dims[d] = r.u32();
      if (dims[d] == 0)
        throw DecodeError(DecodeError::Kind::kBadShape, "zero dim in blob");
      if (volume > (1u << 28) / dims[d])
        throw DecodeError(DecodeError::Kind::kBadShape, "blob tensor too large");
      volume *= dims[d];
    }
    // Reject truncated payloads before allocating element storage.
    r.need(volume * element_size(dtype));
    std::vector<double> data(volume);
    if (dtype == WireDtype::kF32)
      for (size_t k = 0; k < volume; ++k) data[k] = r.f32();
    else
      for (size_t k = 0; k < volume; ++k) data[k] = r.f64();
    out.entries.push_back({std::move(name), Tensor(std::move(dims), std::move(data))});
  }

  size_t body_end = r.pos();
  uint32_t stored = r.u32();
  if (r.remaining() != 0)
    throw DecodeError(DecodeError::Kind::kTrailingBytes,
                      "trailing bytes after blob");
  if (crc32(blob.first(body_end)) != stored)
    throw DecodeError(DecodeError::Kind::kBadCrc, "blob CRC mismatch");

  out.architecture_id = infer_architecture_id(out.entries);
  return out;
}

}  // namespace fedsim
