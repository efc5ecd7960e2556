#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedsim {

enum class MsgType : uint8_t {
  kHello = 0,   // client -> server, client_id in header, empty payload
  kGlobal = 1,  // server -> client, payload = ParamBlob
  kUpdate = 2,  // client -> server, payload = n_k u64 | ParamBlob
  kDone = 3,    // server -> client, empty payload
  kErr = 4,     // either direction, payload = code u16 | UTF-8 reason
};

enum class ErrCode : uint16_t {
  kStaleRound = 1,
  kDuplicateClient = 2,
  kProtocol = 3,
  kInternal = 4,
};

struct Message {
  MsgType type = MsgType::kHello;
  uint32_t round = 0;
  uint32_t client_id = 0;
  std::vector<uint8_t> payload;

  bool operator==(const Message&) const = default;
};

// Framing, all integers little-endian:
//   magic "FMSG" | version u16 = 1 | type u8 | round u32 | client_id u32 |
//   payload_len u32 | payload | crc32 u32 over everything preceding it.
inline constexpr size_t kMessageHeaderSize = 19;
inline constexpr uint32_t kMaxMessagePayload = 64u << 20;

std::vector<uint8_t> encode_message(const Message& msg);
Message decode_message(std::span<const uint8_t> bytes);

struct MessageHeader {
  MsgType type;
  uint32_t round = 0;
  uint32_t client_id = 0;
  uint32_t payload_len = 0;
};

// Validates magic/version/type and the payload length bound.
MessageHeader decode_message_header(std::span<const uint8_t> bytes);

// ERR payload helpers.
std::vector<uint8_t> encode_err_payload(ErrCode code, const std::string& reason);
std::pair<ErrCode, std::string> decode_err_payload(std::span<const uint8_t> payload);

}  // namespace fedsim
