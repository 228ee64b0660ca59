// SPDX-License-Identifier: Apache-2.0
#include "gex/transport.hpp"

#include <fcntl.h>
#include <poll.h>
#include <termios.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>

namespace gex {

namespace {

struct Channel {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::uint8_t> a_to_b;
  std::deque<std::uint8_t> b_to_a;
  bool closed = false;
};

class MemoryEnd : public Transport {
 public:
  MemoryEnd(std::shared_ptr<Channel> ch, bool is_a) : ch_(std::move(ch)), is_a_(is_a) {}
  ~MemoryEnd() override { close(); }

  void write(std::span<const std::uint8_t> bytes) override {
    {
      std::lock_guard lock(ch_->mu);
      if (ch_->closed) throw TransportError("memory transport closed");
      auto& q = is_a_ ? ch_->a_to_b : ch_->b_to_a;
      q.insert(q.end(), bytes.begin(), bytes.end());
    }
    ch_->cv.notify_all();
  }

  dxl::Bytes read(std::chrono::microseconds timeout) override {
    std::unique_lock lock(ch_->mu);
    auto& q = is_a_ ? ch_->b_to_a : ch_->a_to_b;
    ch_->cv.wait_for(lock, timeout, [&] { return !q.empty() || ch_->closed; });
    dxl::Bytes out(q.begin(), q.end());
    q.clear();
    return out;
  }

  void close() override {
    {
      std::lock_guard lock(ch_->mu);
      ch_->closed = true;
    }
    ch_->cv.notify_all();
  }

  bool is_open() const override {
    std::lock_guard lock(ch_->mu);
    return !ch_->closed;
  }

 private:
  std::shared_ptr<Channel> ch_;
  bool is_a_;
};

speed_t baud_constant(long baud) {
  switch (baud) {
    case 9600: return B9600;
    case 57600: return B57600;
    case 115200: return B115200;
    case 1000000: return B1000000;
    case 2000000: return B2000000;
    case 3000000: return B3000000;
    case 4000000: return B4000000;
    default: throw TransportError("unsupported baud rate " + std::to_string(baud));
  }
}

}  // namespace

std::pair<TransportPtr, TransportPtr> make_memory_pair() {
  auto ch = std::make_shared<Channel>();
  return {std::make_shared<MemoryEnd>(ch, true), std::make_shared<MemoryEnd>(ch, false)};
}

void DirectTransport::write(std::span<const std::uint8_t> bytes) {
  if (!open_) throw TransportError("direct transport closed");
  const dxl::Bytes resp = endpoint_.on_bytes(bytes);
  rx_.insert(rx_.end(), resp.begin(), resp.end());
}

dxl::Bytes DirectTransport::read(std::chrono::microseconds) {
  dxl::Bytes out;
  out.swap(rx_);
  return out;
}

void CaptureTransport::write(std::span<const std::uint8_t> bytes) {
  tx_.insert(tx_.end(), bytes.begin(), bytes.end());
  inner_->write(bytes);
}

std::vector<dxl::InstructionPacket> CaptureTransport::written_packets() const {
  dxl::StreamDecoder dec;
  std::vector<dxl::InstructionPacket> out;
  for (auto& p : dec.feed(tx_)) {
    if (auto* ins = std::get_if<dxl::InstructionPacket>(&p)) out.push_back(std::move(*ins));
  }
  return out;
}

SerialTransport::SerialTransport(const std::string& path, long baud) {
  const speed_t speed = baud_constant(baud);
  const int fd = ::open(path.c_str(), O_RDWR | O_NOCTTY | O_CLOEXEC);
  if (fd < 0) throw TransportError("cannot open " + path + ": " + std::strerror(errno));
  termios tio{};
  if (::tcgetattr(fd, &tio) != 0) {
    ::close(fd);
    throw TransportError(path + " is not a terminal device");
  }
  ::cfmakeraw(&tio);
  tio.c_cflag |= CLOCAL | CREAD;
  tio.c_cflag &= ~(CSTOPB | PARENB);
  tio.c_cc[VMIN] = 0;
  tio.c_cc[VTIME] = 0;
  ::cfsetispeed(&tio, speed);
  ::cfsetospeed(&tio, speed);
  if (::tcsetattr(fd, TCSANOW, &tio) != 0) {
    ::close(fd);
    throw TransportError("cannot configure " + path + ": " + std::strerror(errno));
  }
  fd_ = fd;
}

SerialTransport::SerialTransport(int fd) : fd_(fd) {
  if (fd < 0) throw TransportError("invalid descriptor");
}

SerialTransport::~SerialTransport() { close(); }

void SerialTransport::write(std::span<const std::uint8_t> bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    const int fd = fd_.load();
    if (fd < 0) throw TransportError("serial transport closed");
    const ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw TransportError(std::string("serial write: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

dxl::Bytes SerialTransport::read(std::chrono::microseconds timeout) {
  const int fd = fd_.load();
  if (fd < 0) return {};
  pollfd pfd{fd, POLLIN, 0};
  const int ms = static_cast<int>((timeout.count() + 999) / 1000);
  if (::poll(&pfd, 1, ms) <= 0 || !(pfd.revents & POLLIN)) return {};
  dxl::Bytes buf(4096);
  const ssize_t n = ::read(fd, buf.data(), buf.size());
  if (n <= 0) return {};
  buf.resize(static_cast<std::size_t>(n));
  return buf;
}

void SerialTransport::close() {
  const int fd = fd_.exchange(-1);
  if (fd >= 0) ::close(fd);
}

BusServer::BusServer(bus::VirtualBus& bus, TransportPtr transport, ServeOptions options)
    : endpoint_(bus), transport_(std::move(transport)), options_(options) {
  if (!transport_ || !transport_->is_open()) throw TransportError("serve: transport is not open");
  thread_ = std::thread([this] { run(); });
}

BusServer::~BusServer() { stop(); }

void BusServer::stop() {
  stop_ = true;
  if (thread_.joinable()) thread_.join();
}

void BusServer::run() {
  using namespace std::chrono;
  while (!stop_ && transport_->is_open()) {
    const dxl::Bytes in = transport_->read(milliseconds(10));
    if (in.empty()) continue;
    const dxl::Bytes out = endpoint_.on_bytes(in);
    resyncs_ = endpoint_.resync_count();
    frames_ = endpoint_.frames_handled();
    if (out.empty()) continue;
    if (options_.simulate_latency && options_.baud > 0) {
      std::this_thread::sleep_for(nanoseconds(static_cast<long long>(out.size() * 10 * 1e9 / options_.baud)));
    }
    try {
      transport_->write(out);  // one write per batch keeps status frames contiguous
    } catch (const TransportError&) {
      break;
    }
  }
  running_ = false;
}

std::unique_ptr<BusServer> serve_transport(bus::VirtualBus& bus, TransportPtr transport, ServeOptions options) {
  return std::make_unique<BusServer>(bus, std::move(transport), options);
}

}  // namespace gex
