// SPDX-License-Identifier: Apache-2.0
#include "gex/protocol.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>

namespace gex::dxl {

namespace {

constexpr std::array<std::uint8_t, 4> kHeader{0xFF, 0xFF, 0xFD, 0x00};

const std::array<std::uint16_t, 256>& crc_table() {
  static const std::array<std::uint16_t, 256> table = [] {
    std::array<std::uint16_t, 256> t{};
    for (unsigned i = 0; i < 256; ++i) {
      std::uint16_t reg = static_cast<std::uint16_t>(i << 8);
      for (int b = 0; b < 8; ++b) {
        reg = (reg & 0x8000) ? static_cast<std::uint16_t>((reg << 1) ^ 0x8005) : static_cast<std::uint16_t>(reg << 1);
      }
      t[i] = reg;
    }
    return t;
  }();
  return table;
}

Bytes frame(std::uint8_t id, std::uint8_t instruction, const Bytes& stuffed_payload) {
  const std::size_t length = stuffed_payload.size() + 3;
  Bytes out(kHeader.begin(), kHeader.end());
  out.reserve(7 + length);
  out.push_back(id);
  out.push_back(static_cast<std::uint8_t>(length & 0xFF));
  out.push_back(static_cast<std::uint8_t>(length >> 8));
  out.push_back(instruction);
  for (std::uint8_t b : stuffed_payload) out.push_back(b);
  const std::uint16_t crc = crc16(out);
  out.push_back(static_cast<std::uint8_t>(crc & 0xFF));
  out.push_back(static_cast<std::uint8_t>(crc >> 8));
  return out;
}

}  // namespace

bool is_known_instruction(std::uint8_t v) {
  switch (static_cast<Instruction>(v)) {
    case Instruction::Ping:
    case Instruction::Read:
    case Instruction::Write:
    case Instruction::SyncRead:
    case Instruction::SyncWrite:
    case Instruction::Status:
      return true;
  }
  return false;
}

const char* instruction_name(std::uint8_t v) {
  switch (static_cast<Instruction>(v)) {
    case Instruction::Ping: return "PING";
    case Instruction::Read: return "READ";
    case Instruction::Write: return "WRITE";
    case Instruction::SyncRead: return "SYNC_READ";
    case Instruction::SyncWrite: return "SYNC_WRITE";
    case Instruction::Status: return "STATUS";
  }
  return "UNKNOWN";
}

std::uint16_t crc16(std::span<const std::uint8_t> data, std::uint16_t crc) {
  const auto& table = crc_table();
  for (std::uint8_t b : data) {
    crc = static_cast<std::uint16_t>((crc << 8) ^ table[((crc >> 8) ^ b) & 0xFF]);
  }
  return crc;
}

Bytes stuff(std::span<const std::uint8_t> payload) {
  Bytes out;
  out.reserve(payload.size() + payload.size() / 3);
  for (std::size_t i = 0; i < payload.size(); ++i) {
    out.push_back(payload[i]);
    if (i >= 2 && payload[i] == 0xFD && payload[i - 1] == 0xFF && payload[i - 2] == 0xFF) out.push_back(0xFD);
  }
  return out;
}

Bytes unstuff(std::span<const std::uint8_t> stuffed) {
  Bytes out;
  out.reserve(stuffed.size());
  for (std::size_t i = 0; i < stuffed.size(); ++i) {
    out.push_back(stuffed[i]);
    const std::size_t n = out.size();
    if (n >= 3 && out[n - 1] == 0xFD && out[n - 2] == 0xFF && out[n - 3] == 0xFF) {
      if (i + 1 >= stuffed.size() || stuffed[i + 1] != 0xFD) {
        throw ProtocolError("unstuff: header pattern without escape byte at offset " + std::to_string(i));
      }
      ++i;  // skip the escape
    }
  }
  return out;
}

Bytes encode(const InstructionPacket& pkt) {
  if (pkt.instruction == Instruction::Status) throw ProtocolError("encode: STATUS is not an instruction");
  if (!is_known_instruction(static_cast<std::uint8_t>(pkt.instruction))) {
    throw ProtocolError("encode: unsupported instruction");
  }
  if (pkt.id > kBroadcastId) throw ProtocolError("encode: id out of range");
  if ((pkt.instruction == Instruction::SyncRead || pkt.instruction == Instruction::SyncWrite) &&
      pkt.id != kBroadcastId) {
    throw ProtocolError("encode: sync instructions must use the broadcast id");
  }
  if (pkt.params.size() > kMaxParams) throw ProtocolError("encode: parameters exceed 1024 bytes");
  return frame(pkt.id, static_cast<std::uint8_t>(pkt.instruction), stuff(pkt.params));
}

Bytes encode(const StatusPacket& pkt) {
  if (pkt.id >= kBroadcastId) throw ProtocolError("encode: status id must be 0-253");
  if (pkt.params.size() > kMaxParams) throw ProtocolError("encode: parameters exceed 1024 bytes");
  Bytes payload;
  payload.reserve(pkt.params.size() + 1);
  payload.push_back(pkt.error);
  payload.insert(payload.end(), pkt.params.begin(), pkt.params.end());
  return frame(pkt.id, static_cast<std::uint8_t>(Instruction::Status), stuff(payload));
}

Bytes encode(const Packet& pkt) {
  return std::visit([](const auto& p) { return encode(p); }, pkt);
}

std::vector<Packet> StreamDecoder::feed(std::span<const std::uint8_t> bytes) {
  std::vector<Packet> out;
  // Append in slices so the buffer never holds more than one maximal frame.
  while (!bytes.empty()) {
    const std::size_t room = kMaxFrame - buffered();
    const std::size_t take = std::min(room, bytes.size());
    if (head_ > 0 && head_ + buffered() + take > buf_.capacity()) {
      buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(head_));
      head_ = 0;
    }
    buf_.insert(buf_.end(), bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(take));
    bytes = bytes.subspan(take);
    max_buffered_ = std::max(max_buffered_, buffered());
    scan(out);
  }
  return out;
}

void StreamDecoder::drop(std::size_t n) {
  head_ += n;
  if (head_ == buf_.size()) {
    buf_.clear();
    head_ = 0;
  }
}

void StreamDecoder::reject(std::uint8_t id, std::uint8_t instruction, std::string reason) {
  ++resyncs_;
  rejects_.push_back({id, instruction, std::move(reason)});
  drop(1);  // rescan from one byte past the failed header
}

void StreamDecoder::scan(std::vector<Packet>& out) {
  while (true) {
    const std::uint8_t* data = buf_.data() + head_;
    const std::size_t n = buffered();
    const auto* hit = std::search(data, data + n, kHeader.begin(), kHeader.end());
    if (hit == data + n) {
      // Keep a possible partial header at the tail.
      std::size_t keep = 0;
      for (std::size_t k = std::min<std::size_t>(3, n); k > 0; --k) {
        if (std::equal(data + n - k, data + n, kHeader.begin())) {
          keep = k;
          break;
        }
      }
      drop(n - keep);
      return;
    }
    drop(static_cast<std::size_t>(hit - data));
    data = buf_.data() + head_;
    if (buffered() < 7) return;

    const std::uint8_t id = data[4];
    const std::size_t length = static_cast<std::size_t>(data[5]) | (static_cast<std::size_t>(data[6]) << 8);
    if (length < 3 || length > kMaxLengthField) {
      reject(id, 0, "bad length");
      continue;
    }
    if (buffered() < 7 + length) return;

    const std::uint8_t instruction = data[7];
    const std::uint16_t expected = crc16({data, 5 + length});
    const std::uint16_t got = static_cast<std::uint16_t>(data[5 + length] | (data[6 + length] << 8));
    if (expected != got) {
      reject(id, instruction, "crc");
      continue;
    }
    Bytes payload;
    try {
      payload = unstuff({data + 8, length - 3});
    } catch (const ProtocolError&) {
      reject(id, instruction, "stuffing");
      continue;
    }
    if (!is_known_instruction(instruction)) {
      reject(id, instruction, "unknown instruction");
      continue;
    }
    if (static_cast<Instruction>(instruction) == Instruction::Status) {
      if (payload.empty() || id >= kBroadcastId || payload.size() - 1 > kMaxParams) {
        reject(id, instruction, "malformed status");
        continue;
      }
      out.emplace_back(StatusPacket{id, payload[0], Bytes(payload.begin() + 1, payload.end())});
    } else {
      if (id > kBroadcastId || payload.size() > kMaxParams) {
        reject(id, instruction, "malformed instruction");
        continue;
      }
      out.emplace_back(InstructionPacket{id, static_cast<Instruction>(instruction), std::move(payload)});
    }
    drop(7 + length);
  }
}

std::vector<RejectedFrame> StreamDecoder::take_rejects() {
  std::vector<RejectedFrame> r;
  r.swap(rejects_);
  return r;
}

void StreamDecoder::reset() {
  buf_.clear();
  head_ = 0;
  rejects_.clear();
}

Bytes le_bytes(std::int64_t value, std::size_t width) {
  Bytes out(width);
  auto u = static_cast<std::uint64_t>(value);
  for (std::size_t i = 0; i < width; ++i) out[i] = static_cast<std::uint8_t>((u >> (8 * i)) & 0xFF);
  return out;
}

std::int64_t from_le(std::span<const std::uint8_t> bytes, bool is_signed) {
  std::uint64_t u = 0;
  for (std::size_t i = 0; i < bytes.size(); ++i) u |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if (is_signed && !bytes.empty() && bytes.size() < 8 && (bytes.back() & 0x80)) {
    u |= ~std::uint64_t{0} << (8 * bytes.size());
  }
  return static_cast<std::int64_t>(u);
}

InstructionPacket build_sync_write(std::uint16_t address, std::uint16_t width, std::span<const SyncEntry> entries) {
  InstructionPacket pkt{kBroadcastId, Instruction::SyncWrite, {}};
  auto& p = pkt.params;
  for (auto b : le_bytes(address, 2)) p.push_back(b);
  for (auto b : le_bytes(width, 2)) p.push_back(b);
  std::set<std::uint8_t> seen;
  for (const auto& e : entries) {
    if (e.data.size() != width) throw ProtocolError("sync write: entry width mismatch for id " + std::to_string(e.id));
    if (e.id >= kBroadcastId) throw ProtocolError("sync write: invalid id");
    if (!seen.insert(e.id).second) throw ProtocolError("sync write: duplicate id " + std::to_string(e.id));
    p.push_back(e.id);
    p.insert(p.end(), e.data.begin(), e.data.end());
  }
  if (p.size() > kMaxParams) throw ProtocolError("sync write: parameters exceed 1024 bytes");
  return pkt;
}

InstructionPacket build_sync_read(std::uint16_t address, std::uint16_t width, std::span<const std::uint8_t> ids) {
  InstructionPacket pkt{kBroadcastId, Instruction::SyncRead, {}};
  auto& p = pkt.params;
  for (auto b : le_bytes(address, 2)) p.push_back(b);
  for (auto b : le_bytes(width, 2)) p.push_back(b);
  std::set<std::uint8_t> seen;
  for (auto id : ids) {
    if (id >= kBroadcastId) throw ProtocolError("sync read: invalid id");
    if (!seen.insert(id).second) throw ProtocolError("sync read: duplicate id " + std::to_string(id));
    p.push_back(id);
  }
  return pkt;
}

InstructionPacket build_ping(std::uint8_t id) { return {id, Instruction::Ping, {}}; }

InstructionPacket build_read(std::uint8_t id, std::uint16_t address, std::uint16_t length) {
  InstructionPacket pkt{id, Instruction::Read, le_bytes(address, 2)};
  for (auto b : le_bytes(length, 2)) pkt.params.push_back(b);
  return pkt;
}

InstructionPacket build_write(std::uint8_t id, std::uint16_t address, std::span<const std::uint8_t> data) {
  InstructionPacket pkt{id, Instruction::Write, le_bytes(address, 2)};
  for (std::uint8_t b : data) pkt.params.push_back(b);
  return pkt;
}

SyncWriteRequest parse_sync_write(std::span<const std::uint8_t> params) {
  if (params.size() < 4) throw ProtocolError("sync write: short parameters");
  SyncWriteRequest req;
  req.address = static_cast<std::uint16_t>(from_le(params.subspan(0, 2), false));
  req.width = static_cast<std::uint16_t>(from_le(params.subspan(2, 2), false));
  const std::size_t block = 1 + req.width;
  if ((params.size() - 4) % block != 0) throw ProtocolError("sync write: ragged entry blocks");
  for (std::size_t off = 4; off < params.size(); off += block) {
    req.entries.push_back({params[off], Bytes(params.begin() + static_cast<std::ptrdiff_t>(off + 1),
                                              params.begin() + static_cast<std::ptrdiff_t>(off + block))});
  }
  return req;
}

SyncReadRequest parse_sync_read(std::span<const std::uint8_t> params) {
  if (params.size() < 4) throw ProtocolError("sync read: short parameters");
  SyncReadRequest req;
  req.address = static_cast<std::uint16_t>(from_le(params.subspan(0, 2), false));
  req.width = static_cast<std::uint16_t>(from_le(params.subspan(2, 2), false));
  req.ids.assign(params.begin() + 4, params.end());
  return req;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789ABCDEF";
  std::string s;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (i) s.push_back(' ');
    s.push_back(kDigits[bytes[i] >> 4]);
    s.push_back(kDigits[bytes[i] & 0xF]);
  }
  return s;
}

Bytes from_hex(std::string_view text) {
  Bytes out;
  int nibble = -1;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (nibble >= 0) throw ProtocolError("hex: odd digit before whitespace");
      continue;
    }
    int v;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
    else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
    else throw ProtocolError(std::string("hex: invalid character '") + c + "'");
    if (nibble < 0) {
      nibble = v;
    } else {
      out.push_back(static_cast<std::uint8_t>(nibble << 4 | v));
      nibble = -1;
    }
  }
  if (nibble >= 0) throw ProtocolError("hex: odd number of digits");
  return out;
}

}  // namespace gex::dxl
