// SPDX-License-Identifier: Apache-2.0
// Hand and glove handles: joint-level API over the servo bus.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gex/kinematics.hpp"
#include "gex/transport.hpp"
#include "gex/virtual_bus.hpp"

namespace gex::sdk {

class DeviceError : public Error {
 public:
  using Error::Error;
};

class NotConnectedError : public DeviceError {
 public:
  using DeviceError::DeviceError;
};

class TimeoutError : public DeviceError {
 public:
  using DeviceError::DeviceError;
};

class LimitError : public DeviceError {
 public:
  using DeviceError::DeviceError;
};

/// Servo error byte reported in a status packet.
class ServoError : public DeviceError {
 public:
  ServoError(std::uint8_t id, std::uint8_t code, const std::string& what)
      : DeviceError(what), id_(id), code_(code) {}
  std::uint8_t id() const { return id_; }
  std::uint8_t code() const { return code_; }

 private:
  std::uint8_t id_;
  std::uint8_t code_;
};

constexpr double kDegPerTick = 360.0 / bus::kTicksPerRev;

std::int64_t deg_to_ticks(double deg, int zero_tick);
double ticks_to_deg(std::int64_t ticks, int zero_tick);

class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() = 0;
  virtual void sleep(double seconds) = 0;
};

class SteadyClock : public Clock {
 public:
  double now() override;
  void sleep(double seconds) override;
};

/// Simulated time; sleeping advances the given buses in fixed increments.
class SimClock : public Clock {
 public:
  explicit SimClock(std::vector<bus::VirtualBus*> buses = {}, double dt = 1e-3) : buses_(std::move(buses)), dt_(dt) {}
  double now() override { return t_; }
  void sleep(double seconds) override;
  void advance(double seconds) { t_ += seconds; }

 private:
  std::vector<bus::VirtualBus*> buses_;
  double dt_;
  double t_ = 0.0;
};

/// Per-id results of a bulk read; `values[i]` is empty when motor i did not answer.
struct BulkRead {
  std::vector<std::optional<std::int64_t>> values;
  bool complete() const;
  std::vector<std::size_t> missing() const;
};

struct DeviceOptions {
  double response_timeout = 0.1;  // seconds of wall time per transaction
  double cache_max_age = 0.05;
  double home_timeout = 2.0;
  double home_tolerance_deg = 1.0;
  double home_poll = 0.01;
};

/// Present Current/Velocity/Position block, read in one frame.
struct JointState {
  std::vector<double> position_deg;
  std::vector<double> velocity_rad_s;
  std::vector<double> current_ma;
};

/// One handle per device; motor indices are 0-based in model joint order.
class Device {
 public:
  Device(HandModel model, TransportPtr port, Clock& clock, DeviceOptions options = {});
  virtual ~Device() = default;

  const HandModel& model() const { return model_; }
  std::size_t motor_count() const { return joints_.size(); }
  std::uint8_t motor_id(std::size_t motor_index) const;
  const std::vector<std::uint8_t>& motor_ids() const { return ids_; }

  /// PINGs every bound id; with `init`, writes Goal PWM then enables torque on all motors.
  void connect(int goal_pwm = bus::kPwmFullScale, bool init = true);
  void disconnect();
  bool connected() const { return connected_; }

  void home();
  void setj(std::size_t motor_index, double degrees);
  void setj_all(const std::vector<double>& degrees);
  std::vector<double> getj();
  /// One SYNC_READ of the present-state block; also refreshes the joint cache.
  JointState read_state();
  Vec3 fk_finger(std::size_t finger_index);
  Vec3 fk_finger(std::string_view finger);

  void set_torque(std::size_t motor_index, bool on);
  void set_torque_all(bool on);
  void set_mode(std::size_t motor_index, bus::OperatingMode mode);
  void set_goal_current(std::size_t motor_index, int milliamps);

  /// One SYNC_WRITE to the listed motors.
  void sync_write(std::uint16_t address, std::uint16_t width, const std::vector<std::size_t>& motors,
                  const std::vector<std::int64_t>& values);
  /// One SYNC_READ across the listed motors.
  BulkRead sync_read(std::uint16_t address, std::uint16_t width, const std::vector<std::size_t>& motors,
                     bool is_signed = true);

  bool torque_enabled(std::size_t motor_index) const { return torque_on_.at(motor_index); }
  const std::vector<double>& cached_joints() const { return cache_; }
  double cache_time() const { return cache_time_; }

 protected:
  void require_connected() const;
  void check_limits(std::size_t motor_index, double degrees) const;
  void send(const dxl::InstructionPacket& pkt);
  std::vector<dxl::StatusPacket> await(const std::vector<std::uint8_t>& ids);
  dxl::StatusPacket transact(const dxl::InstructionPacket& pkt);
  void write_one(std::size_t motor_index, std::uint16_t address, std::int64_t value, std::size_t width);

  HandModel model_;
  TransportPtr port_;
  Clock& clock_;
  DeviceOptions options_;
  std::vector<const JointSpec*> joints_;
  std::vector<std::uint8_t> ids_;
  dxl::StreamDecoder decoder_;
  std::vector<dxl::StatusPacket> pending_;
  bool connected_ = false;
  std::vector<bool> torque_on_;
  std::vector<double> cache_;
  double cache_time_ = -1e300;
};

class Hand : public Device {
 public:
  using Device::Device;
};

class Glove : public Device {
 public:
  using Device::Device;
  /// Listing-style default: the glove is read-only until feedback is requested.
  void connect(int goal_pwm = bus::kPwmFullScale, bool init = false) { Device::connect(goal_pwm, init); }
};

/// Named in-memory ports for `mem:<name>` selection strings.
void register_memory_port(const std::string& name, TransportPtr port);
void unregister_memory_port(const std::string& name);
/// `mem:<name>` resolves a registered port; anything else is opened as a serial device.
TransportPtr open_port(const std::string& selection, long baud = bus::kDefaultBaud);

/// Attaches one servo per model joint at the model's home pose.
void attach_model(bus::VirtualBus& bus, const HandModel& model, const bus::ServoProfile& profile);
/// Same, with shafts placed at joint pose `q` (radians).
void attach_model(bus::VirtualBus& bus, const HandModel& model, const bus::ServoProfile& profile, const JointVector& q);
/// Shaft angle for joint angle `q` on a joint calibrated at `zero_tick`.
double joint_to_shaft(double q, int zero_tick);
double shaft_to_joint(double theta, int zero_tick);

}  // namespace gex::sdk
