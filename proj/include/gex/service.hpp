// SPDX-License-Identifier: Apache-2.0
// Live session served over a websocket at `/ws`.
//
// Threads: one control thread owns the teleop session and runs at the control rate; one I/O thread
// owns the listener, client connections and the state broadcast timer. They meet in two channels:
// a bounded snapshot queue (control -> I/O, oldest dropped) and a command mailbox (I/O -> control,
// drained at tick boundaries).
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "gex/gateway.hpp"

namespace gex::gateway {

class ServiceError : public Error {
 public:
  using Error::Error;
};

/// Cadence of the control thread, measured between consecutive tick starts.
struct TickStats {
  std::size_t intervals = 0;
  double period = 0.0;         // nominal, seconds
  double mean_interval = 0.0;  // seconds
  double rms_jitter = 0.0;     // root mean square of (interval - period)
  double max_deviation = 0.0;  // max |interval - period|
  double p95_deviation = 0.0;  // 95th percentile of |interval - period|
  double p99_deviation = 0.0;
};

struct ServiceCounters {
  std::size_t ticks = 0;
  std::size_t snapshots_dropped = 0;  // loop -> broadcaster overflow
  std::size_t states_dropped = 0;     // per-client outbox overflow, summed over clients
  std::size_t states_sent = 0;
  std::size_t clients = 0;
};

class Service {
 public:
  explicit Service(GatewayConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the listener and starts both threads. Returns the bound port.
  /// Throws ServiceError when the address is unavailable.
  std::uint16_t start();

  /// Closes connections, finishes any recording and joins the threads. Idempotent.
  void stop();

  /// Blocks until stop() is called from another thread or a signal handler path.
  void wait();

  bool running() const;
  std::uint16_t port() const;
  TickStats tick_stats() const;
  ServiceCounters counters() const;

  struct Impl;  // defined in the implementation file only

 private:
  std::unique_ptr<Impl> impl_;
};

/// Message envelope helpers shared with tests and tools.
nlohmann::ordered_json make_error(const nlohmann::json& seq, const std::string& message);
nlohmann::ordered_json make_ack(const nlohmann::json& seq, const std::string& of);

}  // namespace gex::gateway
