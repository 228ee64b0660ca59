// SPDX-License-Identifier: Apache-2.0
// Duplex byte channels between a controller and a bus.
#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <string>
#include <thread>
#include <utility>

#include "gex/protocol.hpp"
#include "gex/virtual_bus.hpp"

namespace gex {

class TransportError : public Error {
 public:
  using Error::Error;
};

/// Preserves byte order; reads may return any fragment of what was written.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void write(std::span<const std::uint8_t> bytes) = 0;
  /// Returns whatever is available, waiting up to `timeout` for the first byte.
  /// An empty result means timeout or closed.
  virtual dxl::Bytes read(std::chrono::microseconds timeout) = 0;
  virtual void close() = 0;
  virtual bool is_open() const = 0;
  /// True when every response is available as soon as write() returns.
  virtual bool synchronous() const { return false; }
};

using TransportPtr = std::shared_ptr<Transport>;

/// Two connected in-memory endpoints; closing either closes both.
std::pair<TransportPtr, TransportPtr> make_memory_pair();

/// Synchronous in-process link: each write is handled by the bus before returning.
class DirectTransport : public Transport {
 public:
  explicit DirectTransport(bus::VirtualBus& bus) : endpoint_(bus) {}
  void write(std::span<const std::uint8_t> bytes) override;
  dxl::Bytes read(std::chrono::microseconds timeout) override;
  void close() override { open_ = false; }
  bool is_open() const override { return open_; }
  bool synchronous() const override { return true; }
  std::size_t resync_count() const { return endpoint_.resync_count(); }

 private:
  bus::BusEndpoint endpoint_;
  dxl::Bytes rx_;
  bool open_ = true;
};

/// Records every byte written through it before forwarding.
class CaptureTransport : public Transport {
 public:
  explicit CaptureTransport(TransportPtr inner) : inner_(std::move(inner)) {}
  void write(std::span<const std::uint8_t> bytes) override;
  dxl::Bytes read(std::chrono::microseconds timeout) override { return inner_->read(timeout); }
  void close() override { inner_->close(); }
  bool is_open() const override { return inner_->is_open(); }
  bool synchronous() const override { return inner_->synchronous(); }

  const dxl::Bytes& written() const { return tx_; }
  std::vector<dxl::InstructionPacket> written_packets() const;
  void clear() { tx_.clear(); }

 private:
  TransportPtr inner_;
  dxl::Bytes tx_;
};

/// OS serial device in raw 8N1 mode.
class SerialTransport : public Transport {
 public:
  SerialTransport(const std::string& path, long baud = bus::kDefaultBaud);
  /// Adopts an already-open descriptor (e.g. a pty master).
  explicit SerialTransport(int fd);
  ~SerialTransport() override;
  SerialTransport(const SerialTransport&) = delete;
  SerialTransport& operator=(const SerialTransport&) = delete;

  void write(std::span<const std::uint8_t> bytes) override;
  dxl::Bytes read(std::chrono::microseconds timeout) override;
  void close() override;
  bool is_open() const override { return fd_.load() >= 0; }

 private:
  std::atomic<int> fd_{-1};
};

struct ServeOptions {
  long baud = bus::kDefaultBaud;
  /// Delay responses by 10 bit-times per byte.
  bool simulate_latency = true;
};

/// Runs a bus endpoint on its own thread until stopped or the transport closes.
class BusServer {
 public:
  BusServer(bus::VirtualBus& bus, TransportPtr transport, ServeOptions options = {});
  ~BusServer();
  BusServer(const BusServer&) = delete;
  BusServer& operator=(const BusServer&) = delete;

  void stop();
  bool running() const { return running_; }
  std::size_t resync_count() const { return resyncs_; }
  std::size_t frames_handled() const { return frames_; }

 private:
  void run();

  bus::BusEndpoint endpoint_;
  TransportPtr transport_;
  ServeOptions options_;
  std::atomic<bool> stop_{false};
  std::atomic<bool> running_{true};
  std::atomic<std::size_t> resyncs_{0};
  std::atomic<std::size_t> frames_{0};
  std::thread thread_;
};

std::unique_ptr<BusServer> serve_transport(bus::VirtualBus& bus, TransportPtr transport, ServeOptions options = {});

}  // namespace gex
