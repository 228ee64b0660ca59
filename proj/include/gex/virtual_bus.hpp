// SPDX-License-Identifier: Apache-2.0
// Emulated multidrop servo bus: register maps, servo dynamics and packet handling.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gex/protocol.hpp"

namespace gex::bus {

constexpr int kTicksPerRev = 4096;
constexpr double kTickRad = 2.0 * std::numbers::pi / kTicksPerRev;
constexpr double kVelocityUnitRpm = 0.229;
constexpr int kPwmFullScale = 885;
constexpr long kDefaultBaud = 1'000'000;

/// Control table addresses (vendor layout for the servo family).
namespace reg {
constexpr std::uint16_t kModelNumber = 0;
constexpr std::uint16_t kFirmwareVersion = 6;
constexpr std::uint16_t kId = 7;
constexpr std::uint16_t kBaudRate = 8;
constexpr std::uint16_t kOperatingMode = 11;
constexpr std::uint16_t kTorqueEnable = 64;
constexpr std::uint16_t kGoalPwm = 100;
constexpr std::uint16_t kGoalCurrent = 102;
constexpr std::uint16_t kGoalVelocity = 104;
constexpr std::uint16_t kGoalPosition = 116;
constexpr std::uint16_t kPresentCurrent = 126;
constexpr std::uint16_t kPresentVelocity = 128;
constexpr std::uint16_t kPresentPosition = 132;
constexpr std::uint16_t kTableSize = 256;
}  // namespace reg

enum class OperatingMode : std::uint8_t { Current = 0, Velocity = 1, Position = 3, Pwm = 16 };

struct RegisterInfo {
  std::uint16_t address;
  std::uint8_t width;
  bool writable;
  bool eeprom;
  bool is_signed;
  std::int64_t min;
  std::int64_t max;
  const char* name;
};

const std::vector<RegisterInfo>& register_table();
const RegisterInfo* find_register(std::uint16_t address);

struct ServoProfile {
  std::string model_name;
  std::uint16_t model_number = 0;
  double gear_ratio = 288.0;
  double rated_torque = 0.53;      // N·m, output side
  int ticks_per_rev = kTicksPerRev;
  double torque_constant = 1.0;    // N·m per A
  double coulomb_friction = 5e-4;  // N·m at the 288:1 reference reduction
  double rotor_inertia_eff = 1e-4; // kg·m², reflected to the output
  double kp = 1.0;                 // N·m/rad
  double kd = 0.02;                // N·m·s/rad
  double kv = 0.01;                // N·m·s/rad, velocity mode

  /// Friction after scaling by gear_ratio/288.
  double effective_friction() const { return coulomb_friction * gear_ratio / 288.0; }
  void validate() const;

  static ServoProfile m288();
  static ServoProfile m077();
};

ServoProfile load_profile(std::string_view text);
ServoProfile load_profile_file(const std::string& path);
std::string profile_to_json(const ServoProfile& p);

/// Angle in [0, 2π).
double wrap_angle(double theta);
int rad_to_ticks(double theta);
double ticks_to_rad(std::int64_t ticks);

class VirtualServo {
 public:
  VirtualServo(std::uint8_t id, ServoProfile profile, double theta);

  std::uint8_t id() const { return id_; }
  const ServoProfile& profile() const { return profile_; }

  /// Returns a status error byte; nothing is applied unless the whole write is valid.
  std::uint8_t write(std::uint16_t address, std::span<const std::uint8_t> data);
  std::uint8_t read(std::uint16_t address, std::uint16_t length, dxl::Bytes& out) const;

  std::int64_t register_value(std::uint16_t address) const;

  void step(double dt);

  bool torque_enabled() const { return regs_[reg::kTorqueEnable] != 0; }
  OperatingMode mode() const { return static_cast<OperatingMode>(regs_[reg::kOperatingMode]); }
  double theta() const { return theta_; }
  double omega() const { return omega_; }
  /// Motor torque applied during the last integration substep (after the clamp).
  double motor_torque() const { return motor_torque_; }
  double external_torque() const { return external_torque_; }
  void set_external_torque(double tau) { external_torque_ = tau; }
  /// Test hook: place the shaft without going through the bus.
  void set_state(double theta, double omega);
  /// Overrides the Present Current readback (mA) with an externally simulated value.
  void set_sensed_current(std::optional<double> milliamps);

 private:
  void store(std::uint16_t address, std::int64_t value);
  void on_register_written(std::uint16_t address, std::int64_t old_value);
  double commanded_torque() const;
  void update_present();

  std::uint8_t id_;
  ServoProfile profile_;
  std::array<std::uint8_t, reg::kTableSize> regs_{};
  double theta_ = 0.0;
  double omega_ = 0.0;
  double motor_torque_ = 0.0;
  double external_torque_ = 0.0;
  std::optional<double> sensed_current_;
};

class VirtualBus {
 public:
  VirtualBus() = default;
  VirtualBus(const VirtualBus&) = delete;
  VirtualBus& operator=(const VirtualBus&) = delete;

  /// Power-on defaults: torque disabled, position mode. `theta` is the initial shaft angle.
  VirtualServo& attach(std::uint8_t id, const ServoProfile& profile, double theta = std::numbers::pi);

  std::size_t size() const { return servos_.size(); }
  std::vector<std::uint8_t> ids() const;
  bool has(std::uint8_t id) const { return servos_.count(id) != 0; }
  VirtualServo& servo(std::uint8_t id);
  const VirtualServo& servo(std::uint8_t id) const;

  std::vector<dxl::StatusPacket> handle(const dxl::InstructionPacket& pkt);

  /// Advances all servos; dt in (0, 0.01].
  void step(double dt);

  double time() const { return time_; }
  std::mutex& mutex() const { return mu_; }

 private:
  std::map<std::uint8_t, VirtualServo> servos_;
  double time_ = 0.0;
  mutable std::mutex mu_;
};

/// Decodes a byte stream, dispatches to the bus and returns encoded responses.
class BusEndpoint {
 public:
  explicit BusEndpoint(VirtualBus& bus) : bus_(bus) {}

  dxl::Bytes on_bytes(std::span<const std::uint8_t> bytes);
  std::size_t resync_count() const { return decoder_.resync_count(); }
  std::size_t frames_handled() const { return frames_; }

 private:
  VirtualBus& bus_;
  dxl::StreamDecoder decoder_;
  std::size_t frames_ = 0;
};

}  // namespace gex::bus
