#include "fedsim/message.hpp"

#include <cstring>

#include "fedsim/codec.hpp"
#include "fedsim/errors.hpp"

namespace fedsim {

namespace {
constexpr char kMagic[4] = {'F', 'M', 'S', 'G'};
constexpr uint16_t kVersion = 1;

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(v & 0xFF);
  b.push_back(v >> 8);
}
void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xFF);
}
uint16_t get_u16(const uint8_t* p) { return p[0] | (uint16_t(p[1]) << 8); }
uint32_t get_u32(const uint8_t* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(p[i]) << (8 * i);
  return v;
}
}  // namespace

std::vector<uint8_t> encode_message(const Message& msg) {
  if (msg.payload.size() > kMaxMessagePayload)
    throw EncodeError("message payload too large");
  std::vector<uint8_t> out;
  out.reserve(kMessageHeaderSize + msg.payload.size() + 4);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kVersion);
  out.push_back(static_cast<uint8_t>(msg.type));
  put_u32(out, msg.round);
  put_u32(out, msg.client_id);
  put_u32(out, static_cast<uint32_t>(msg.payload.size()));
  out.insert(out.end(), msg.payload.begin(), msg.payload.end());
  put_u32(out, crc32(out));
  return out;
}

MessageHeader decode_message_header(std::span<const uint8_t> bytes) {
  if (bytes.size() < kMessageHeaderSize)
    throw DecodeError(DecodeError::Kind::kTruncated, "message header truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw DecodeError(DecodeError::Kind::kBadMagic, "bad message magic");
  if (get_u16(bytes.data() + 4) != kVersion)
    throw DecodeError(DecodeError::Kind::kBadVersion,
                      "unsupported message version");
  uint8_t type = bytes[6];
  if (type > static_cast<uint8_t>(MsgType::kErr))
    throw DecodeError(DecodeError::Kind::kBadType, "unknown message type");
  MessageHeader h;
  h.type = static_cast<MsgType>(type);
  h.round = get_u32(bytes.data() + 7);
  h.client_id = get_u32(bytes.data() + 11);
  h.payload_len = get_u32(bytes.data() + 15);
  if (h.payload_len > kMaxMessagePayload)
    throw DecodeError(DecodeError::Kind::kBadShape, "message payload too large");
  return h;
}

Message decode_message(std::span<const uint8_t> bytes) {
  MessageHeader h = decode_message_header(bytes);
  size_t total = kMessageHeaderSize + size_t(h.payload_len) + 4;
  if (bytes.size() < total)
    throw DecodeError(DecodeError::Kind::kTruncated, "message truncated");
  if (bytes.size() > total)
    throw DecodeError(DecodeError::Kind::kTrailingBytes,
                      "trailing bytes after message");
  uint32_t stored = get_u32(bytes.data() + total - 4);
  if (crc32(bytes.first(total - 4)) != stored)
    throw DecodeError(DecodeError::Kind::kBadCrc, "message CRC mismatch");
  Message msg;
  msg.type = h.type;
  msg.round = h.round;
  msg.client_id = h.client_id;
  msg.payload.assign(bytes.begin() + kMessageHeaderSize,
                     bytes.begin() + kMessageHeaderSize + h.payload_len);
  return msg;
}

std::vector<uint8_t> encode_err_payload(ErrCode code,
                                        const std::string& reason) {
  std::vector<uint8_t> out;
  put_u16(out, static_cast<uint16_t>(code));
  out.insert(out.end(), reason.begin(), reason.end());
  return out;
}

std::pair<ErrCode, std::string> decode_err_payload(
    std::span<const uint8_t> payload) {
  if (payload.size() < 2)
    throw DecodeError(DecodeError::Kind::kTruncated, "ERR payload truncated");
  ErrCode code = static_cast<ErrCode>(get_u16(payload.data()));
  std::string reason(payload.begin() + 2, payload.end());
  return {code, reason};
}

}  // namespace fedsim
