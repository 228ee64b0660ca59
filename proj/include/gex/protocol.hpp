// SPDX-License-Identifier: Apache-2.0
// Servo bus protocol 2.0 codec: framing, byte stuffing, CRC-16, sync operations.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gex/error.hpp"

namespace gex::dxl {

using Bytes = std::vector<std::uint8_t>;

enum class Instruction : std::uint8_t {
  Ping = 0x01,
  Read = 0x02,
  Write = 0x03,
  SyncRead = 0x82,
  SyncWrite = 0x83,
  Status = 0x55,
};

constexpr std::uint8_t kBroadcastId = 254;
constexpr std::size_t kMaxParams = 1024;
/// Longest legal frame: header(4) id(1) length(2) + length field maximum.
constexpr std::size_t kMaxLengthField = 1 + (1 + kMaxParams) + (1 + kMaxParams) / 3 + 2;
constexpr std::size_t kMaxFrame = 7 + kMaxLengthField;

/// Status error byte: bit 7 alert, low 7 bits error number.
namespace error {
constexpr std::uint8_t kNone = 0x00;
constexpr std::uint8_t kResultFail = 0x01;
constexpr std::uint8_t kInstruction = 0x02;
constexpr std::uint8_t kCrc = 0x03;
constexpr std::uint8_t kDataRange = 0x04;
constexpr std::uint8_t kDataLength = 0x05;
constexpr std::uint8_t kDataLimit = 0x06;
constexpr std::uint8_t kAccess = 0x07;
constexpr std::uint8_t kAlertBit = 0x80;
}  // namespace error

class ProtocolError : public Error {
 public:
  using Error::Error;
};

struct InstructionPacket {
  std::uint8_t id = 0;
  Instruction instruction = Instruction::Ping;
  Bytes params;

  bool operator==(const InstructionPacket&) const = default;
};

struct StatusPacket {
  std::uint8_t id = 0;
  std::uint8_t error = 0;
  Bytes params;

  bool operator==(const StatusPacket&) const = default;
};

using Packet = std::variant<InstructionPacket, StatusPacket>;

bool is_known_instruction(std::uint8_t value);
const char* instruction_name(std::uint8_t value);

/// CRC-16 (poly 0x8005, init 0, MSB first, no reflection, no final xor).
/// Pass a previous result as `crc` to continue a running checksum.
std::uint16_t crc16(std::span<const std::uint8_t> data, std::uint16_t crc = 0);

/// Inserts 0xFD after every FF FF FD occurrence.
Bytes stuff(std::span<const std::uint8_t> payload);
/// Inverse of stuff(); throws ProtocolError on an FF FF FD not followed by FD.
Bytes unstuff(std::span<const std::uint8_t> stuffed);

/// Throws ProtocolError when the packet violates its invariants.
Bytes encode(const InstructionPacket& pkt);
Bytes encode(const StatusPacket& pkt);
Bytes encode(const Packet& pkt);

/// A frame that was framed correctly enough to be read but was discarded.
struct RejectedFrame {
  std::uint8_t id = 0;
  std::uint8_t instruction = 0;
  std::string reason;
};

/// Incremental frame scanner for a noisy byte stream. Never throws on input.
class StreamDecoder {
 public:
  std::vector<Packet> feed(std::span<const std::uint8_t> bytes);

  std::size_t resync_count() const { return resyncs_; }
  std::size_t buffered() const { return buf_.size() - head_; }
  std::size_t max_buffered() const { return max_buffered_; }
  std::vector<RejectedFrame> take_rejects();
  void reset();

 private:
  void scan(std::vector<Packet>& out);
  void drop(std::size_t n);
  void reject(std::uint8_t id, std::uint8_t instruction, std::string reason);

  Bytes buf_;
  std::size_t head_ = 0;
  std::size_t resyncs_ = 0;
  std::size_t max_buffered_ = 0;
  std::vector<RejectedFrame> rejects_;
};

struct SyncEntry {
  std::uint8_t id = 0;
  Bytes data;
};

struct SyncWriteRequest {
  std::uint16_t address = 0;
  std::uint16_t width = 0;
  std::vector<SyncEntry> entries;
};

struct SyncReadRequest {
  std::uint16_t address = 0;
  std::uint16_t width = 0;
  std::vector<std::uint8_t> ids;
};

InstructionPacket build_sync_write(std::uint16_t address, std::uint16_t width,
                                   std::span<const SyncEntry> entries);
InstructionPacket build_sync_read(std::uint16_t address, std::uint16_t width,
                                  std::span<const std::uint8_t> ids);
InstructionPacket build_ping(std::uint8_t id);
InstructionPacket build_read(std::uint8_t id, std::uint16_t address, std::uint16_t length);
InstructionPacket build_write(std::uint8_t id, std::uint16_t address, std::span<const std::uint8_t> data);

/// Parameter parsers used by the bus emulator; throw ProtocolError on malformed params.
SyncWriteRequest parse_sync_write(std::span<const std::uint8_t> params);
SyncReadRequest parse_sync_read(std::span<const std::uint8_t> params);

/// Little-endian helpers.
Bytes le_bytes(std::int64_t value, std::size_t width);
std::int64_t from_le(std::span<const std::uint8_t> bytes, bool is_signed);

std::string to_hex(std::span<const std::uint8_t> bytes);
/// Accepts hex pairs in either case with optional whitespace; throws ProtocolError otherwise.
Bytes from_hex(std::string_view text);

}  // namespace gex::dxl
