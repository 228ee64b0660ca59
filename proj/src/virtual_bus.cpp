// SPDX-License-Identifier: Apache-2.0
#include "gex/virtual_bus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gex/error.hpp"

namespace gex::bus {

using dxl::Bytes;
using dxl::Instruction;
using dxl::StatusPacket;
namespace err = dxl::error;

const std::vector<RegisterInfo>& register_table() {
  static const std::vector<RegisterInfo> table{
      {reg::kModelNumber, 2, false, true, false, 0, 65535, "Model Number"},
      {reg::kFirmwareVersion, 1, false, true, false, 0, 255, "Firmware Version"},
      {reg::kId, 1, false, true, false, 0, 253, "ID"},
      {reg::kBaudRate, 1, false, true, false, 0, 6, "Baud Rate"},
      {reg::kOperatingMode, 1, true, true, false, 0, 16, "Operating Mode"},
      {reg::kTorqueEnable, 1, true, false, false, 0, 1, "Torque Enable"},
      {reg::kGoalPwm, 2, true, false, true, -kPwmFullScale, kPwmFullScale, "Goal PWM"},
      {reg::kGoalCurrent, 2, true, false, true, -1750, 1750, "Goal Current"},
      {reg::kGoalVelocity, 4, true, false, true, -445, 445, "Goal Velocity"},
      {reg::kGoalPosition, 4, true, false, true, 0, kTicksPerRev - 1, "Goal Position"},
      {reg::kPresentCurrent, 2, false, false, true, -32768, 32767, "Present Current"},
      {reg::kPresentVelocity, 4, false, false, true, INT32_MIN, INT32_MAX, "Present Velocity"},
      {reg::kPresentPosition, 4, false, false, true, 0, kTicksPerRev - 1, "Present Position"},
  };
  return table;
}

const RegisterInfo* find_register(std::uint16_t address) {
  for (const auto& r : register_table()) {
    if (r.address == address) return &r;
  }
  return nullptr;
}

void ServoProfile::validate() const {
  auto positive = [&](double v, const char* field) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ValidationError("servo profile '" + model_name + "': " + field + " must be positive");
    }
  };
  positive(gear_ratio, "gear_ratio");
  positive(rated_torque, "rated_torque");
  positive(torque_constant, "torque_constant");
  positive(rotor_inertia_eff, "rotor_inertia_eff");
  positive(kp, "kp");
  if (coulomb_friction < 0.0 || kd < 0.0 || kv < 0.0) {
    throw ValidationError("servo profile '" + model_name + "': friction and damping must be non-negative");
  }
  if (ticks_per_rev != kTicksPerRev) {
    throw ValidationError("servo profile '" + model_name + "': ticks_per_rev must be 4096");
  }
}

ServoProfile ServoProfile::m288() {
  ServoProfile p;
  p.model_name = "XL330-M288";
  p.model_number = 1200;
  p.gear_ratio = 288.0;
  p.rated_torque = 0.53;
  p.torque_constant = 1.0;
  p.coulomb_friction = 5e-4;
  p.rotor_inertia_eff = 1e-4;
  p.kp = 1.0;
  p.kd = 0.02;
  p.kv = 0.01;
  return p;
}

ServoProfile ServoProfile::m077() {
  ServoProfile p;
  p.model_name = "XL330-M077";
  p.model_number = 1190;
  p.gear_ratio = 77.0;
  p.rated_torque = 0.215;
  p.torque_constant = 77.0 / 288.0;
  p.coulomb_friction = 5e-4;
  p.rotor_inertia_eff = 5e-5;
  p.kp = 0.5;
  p.kd = 0.01;
  p.kv = 0.005;
  return p;
}

ServoProfile load_profile(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("profile document: ") + e.what());
  }
  ServoProfile p;
  try {
    p.model_name = doc.at("model_name").get<std::string>();
    p.model_number = doc.at("model_number").get<std::uint16_t>();
    p.gear_ratio = doc.at("gear_ratio").get<double>();
    p.rated_torque = doc.at("rated_torque").get<double>();
    p.ticks_per_rev = doc.value("ticks_per_rev", kTicksPerRev);
    p.torque_constant = doc.at("torque_constant").get<double>();
    p.coulomb_friction = doc.at("coulomb_friction").get<double>();
    p.rotor_inertia_eff = doc.at("rotor_inertia_eff").get<double>();
    p.kp = doc.at("kp").get<double>();
    p.kd = doc.at("kd").get<double>();
    p.kv = doc.value("kv", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("profile document: ") + e.what());
  }
  p.validate();
  return p;
}

ServoProfile load_profile_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open profile file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_profile(ss.str());
}

std::string profile_to_json(const ServoProfile& p) {
  nlohmann::ordered_json j{{"model_name", p.model_name},
                           {"model_number", p.model_number},
                           {"gear_ratio", p.gear_ratio},
                           {"rated_torque", p.rated_torque},
                           {"ticks_per_rev", p.ticks_per_rev},
                           {"torque_constant", p.torque_constant},
                           {"coulomb_friction", p.coulomb_friction},
                           {"rotor_inertia_eff", p.rotor_inertia_eff},
                           {"kp", p.kp},
                           {"kd", p.kd},
                           {"kv", p.kv}};
  return j.dump(2);
}

double wrap_angle(double theta) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(theta, two_pi);
  if (w < 0.0) w += two_pi;
  return w >= two_pi ? 0.0 : w;
}

int rad_to_ticks(double theta) {
  const auto t = static_cast<long>(std::lround(wrap_angle(theta) / kTickRad));
  return static_cast<int>(t % kTicksPerRev);
}

double ticks_to_rad(std::int64_t ticks) { return static_cast<double>(ticks) * kTickRad; }

VirtualServo::VirtualServo(std::uint8_t id, ServoProfile profile, double theta)
    : id_(id), profile_(std::move(profile)), theta_(theta) {
  store(reg::kModelNumber, profile_.model_number);
  store(reg::kFirmwareVersion, 52);
  store(reg::kId, id_);
  store(reg::kBaudRate, 3);  // 1 Mbps
  store(reg::kOperatingMode, static_cast<std::int64_t>(OperatingMode::Position));
  store(reg::kGoalPwm, kPwmFullScale);
  update_present();
  store(reg::kGoalPosition, register_value(reg::kPresentPosition));
}

void VirtualServo::store(std::uint16_t address, std::int64_t value) {
  const RegisterInfo* r = find_register(address);
  const Bytes b = dxl::le_bytes(value, r->width);
  std::copy(b.begin(), b.end(), regs_.begin() + address);
}

std::int64_t VirtualServo::register_value(std::uint16_t address) const {
  const RegisterInfo* r = find_register(address);
  if (!r) throw NotFoundError("no register at address " + std::to_string(address));
  return dxl::from_le({regs_.data() + address, r->width}, r->is_signed);
}

std::uint8_t VirtualServo::write(std::uint16_t address, std::span<const std::uint8_t> data) {
  if (data.empty()) return err::kDataLength;
  struct Pending {
    const RegisterInfo* reg;
    std::int64_t value;
  };
  std::vector<Pending> pending;
  std::size_t off = 0;
  while (off < data.size()) {
    const RegisterInfo* r = find_register(static_cast<std::uint16_t>(address + off));
    if (!r || !r->writable) return err::kAccess;
    if (r->eeprom && torque_enabled()) return err::kAccess;
    if (data.size() - off < r->width) return err::kDataLength;
    const std::int64_t v = dxl::from_le(data.subspan(off, r->width), r->is_signed);
    if (v < r->min || v > r->max) return err::kDataLimit;
    if (r->address == reg::kOperatingMode && v != 0 && v != 1 && v != 3 && v != 16) return err::kDataLimit;
    if (r->address == reg::kGoalCurrent && mode() != OperatingMode::Current) return err::kAccess;
    pending.push_back({r, v});
    off += r->width;
  }
  for (const auto& p : pending) {
    const std::int64_t old = register_value(p.reg->address);
    store(p.reg->address, p.value);
    on_register_written(p.reg->address, old);
  }
  return err::kNone;
}

void VirtualServo::on_register_written(std::uint16_t address, std::int64_t old_value) {
  if (address == reg::kTorqueEnable && old_value == 0 && torque_enabled()) {
    // Enabling torque holds the current shaft position.
    store(reg::kGoalPosition, register_value(reg::kPresentPosition));
  }
  if (address == reg::kTorqueEnable && !torque_enabled()) {
    motor_torque_ = 0.0;
    update_present();
  }
}

std::uint8_t VirtualServo::read(std::uint16_t address, std::uint16_t length, Bytes& out) const {
  if (length == 0) return err::kDataLength;
  if (static_cast<std::size_t>(address) + length > reg::kTableSize) return err::kAccess;
  out.assign(regs_.begin() + address, regs_.begin() + address + length);
  return err::kNone;
}

double VirtualServo::commanded_torque() const {
  if (!torque_enabled()) return 0.0;
  switch (mode()) {
    case OperatingMode::Position: {
      const double goal = ticks_to_rad(register_value(reg::kGoalPosition));
      return profile_.kp * (goal - wrap_angle(theta_)) - profile_.kd * omega_;
    }
    case OperatingMode::Current:
      return profile_.torque_constant * static_cast<double>(register_value(reg::kGoalCurrent)) * 1e-3;
    case OperatingMode::Pwm:
      return profile_.rated_torque * static_cast<double>(register_value(reg::kGoalPwm)) / kPwmFullScale;
    case OperatingMode::Velocity: {
      const double goal = static_cast<double>(register_value(reg::kGoalVelocity)) * kVelocityUnitRpm *
                          2.0 * std::numbers::pi / 60.0;
      return profile_.kv * (goal - omega_);
    }
  }
  return 0.0;
}

void VirtualServo::step(double dt) {
  // Substeps keep the explicit PD term well inside its stability region.
  const int n = std::max(1, static_cast<int>(std::ceil(dt / 5e-4 - 1e-9)));
  const double h = dt / n;
  const double J = profile_.rotor_inertia_eff;
  const double fc = profile_.effective_friction();
  // Goal PWM caps output in the closed-loop modes.
  const bool pwm_limited = mode() == OperatingMode::Position || mode() == OperatingMode::Velocity;
  const double limit = pwm_limited ? profile_.rated_torque *
                                         std::abs(static_cast<double>(register_value(reg::kGoalPwm))) / kPwmFullScale
                                   : profile_.rated_torque;
  for (int i = 0; i < n; ++i) {
    motor_torque_ = std::clamp(commanded_torque(), -limit, limit);
    const double trial = omega_ + (motor_torque_ + external_torque_) * h / J;
    const double fric = fc * h / J;
    // Coulomb friction as an impulse that can stop but never reverse the shaft.
    omega_ = std::abs(trial) <= fric ? 0.0 : trial - std::copysign(fric, trial);
    theta_ += omega_ * h;
  }
  update_present();
}

void VirtualServo::set_state(double theta, double omega) {
  theta_ = theta;
  omega_ = omega;
  update_present();
}

void VirtualServo::set_sensed_current(std::optional<double> milliamps) {
  sensed_current_ = milliamps;
  update_present();
}

void VirtualServo::update_present() {
  store(reg::kPresentPosition, rad_to_ticks(theta_));
  const double rpm = omega_ * 60.0 / (2.0 * std::numbers::pi);
  store(reg::kPresentVelocity, std::lround(rpm / kVelocityUnitRpm));
  const double ma = sensed_current_ ? *sensed_current_ : motor_torque_ / profile_.torque_constant * 1e3;
  store(reg::kPresentCurrent, std::clamp<long>(std::lround(ma), -32768, 32767));
}

VirtualServo& VirtualBus::attach(std::uint8_t id, const ServoProfile& profile, double theta) {
  std::lock_guard lock(mu_);
  if (id >= dxl::kBroadcastId) throw ValidationError("servo id must be 0-253");
  if (servos_.count(id)) throw ValidationError("duplicate servo id " + std::to_string(id));
  profile.validate();
  return servos_.emplace(id, VirtualServo(id, profile, theta)).first->second;
}

std::vector<std::uint8_t> VirtualBus::ids() const {
  std::vector<std::uint8_t> out;
  for (const auto& [id, _] : servos_) out.push_back(id);
  return out;
}

VirtualServo& VirtualBus::servo(std::uint8_t id) {
  auto it = servos_.find(id);
  if (it == servos_.end()) throw NotFoundError("no servo with id " + std::to_string(id));
  return it->second;
}

const VirtualServo& VirtualBus::servo(std::uint8_t id) const {
  auto it = servos_.find(id);
  if (it == servos_.end()) throw NotFoundError("no servo with id " + std::to_string(id));
  return it->second;
}

std::vector<StatusPacket> VirtualBus::handle(const dxl::InstructionPacket& pkt) {
  std::lock_guard lock(mu_);
  std::vector<StatusPacket> out;
  const bool broadcast = pkt.id == dxl::kBroadcastId;
  const auto& p = pkt.params;

  switch (pkt.instruction) {
    case Instruction::Ping: {
      auto respond = [&](VirtualServo& s) {
        Bytes params = dxl::le_bytes(s.register_value(reg::kModelNumber), 2);
        params.push_back(static_cast<std::uint8_t>(s.register_value(reg::kFirmwareVersion)));
        out.push_back({s.id(), err::kNone, std::move(params)});
      };
      if (broadcast) {
        for (auto& [id, s] : servos_) respond(s);
      } else if (auto it = servos_.find(pkt.id); it != servos_.end()) {
        respond(it->second);
      }
      break;
    }
    case Instruction::Read: {
      if (broadcast) break;
      auto it = servos_.find(pkt.id);
      if (it == servos_.end()) break;
      if (p.size() != 4) {
        out.push_back({pkt.id, err::kDataLength, {}});
        break;
      }
      const auto addr = static_cast<std::uint16_t>(dxl::from_le({p.data(), 2}, false));
      const auto len = static_cast<std::uint16_t>(dxl::from_le({p.data() + 2, 2}, false));
      Bytes data;
      const std::uint8_t e = it->second.read(addr, len, data);
      out.push_back({pkt.id, e, e == err::kNone ? data : Bytes{}});
      break;
    }
    case Instruction::Write: {
      auto apply = [&](VirtualServo& s) -> std::uint8_t {
        if (p.size() < 3) return err::kDataLength;
        const auto addr = static_cast<std::uint16_t>(dxl::from_le({p.data(), 2}, false));
        return s.write(addr, std::span<const std::uint8_t>(p).subspan(2));
      };
      if (broadcast) {
        for (auto& [id, s] : servos_) apply(s);
      } else if (auto it = servos_.find(pkt.id); it != servos_.end()) {
        out.push_back({pkt.id, apply(it->second), {}});
      }
      break;
    }
    case Instruction::SyncWrite: {
      dxl::SyncWriteRequest req;
      try {
        req = dxl::parse_sync_write(p);
      } catch (const dxl::ProtocolError&) {
        break;
      }
      for (const auto& e : req.entries) {
        if (auto it = servos_.find(e.id); it != servos_.end()) it->second.write(req.address, e.data);
      }
      break;
    }
    case Instruction::SyncRead: {
      dxl::SyncReadRequest req;
      try {
        req = dxl::parse_sync_read(p);
      } catch (const dxl::ProtocolError&) {
        break;
      }
      for (auto id : req.ids) {
        auto it = servos_.find(id);
        if (it == servos_.end()) continue;
        Bytes data;
        const std::uint8_t e = it->second.read(req.address, req.width, data);
        out.push_back({id, e, e == err::kNone ? data : Bytes{}});
      }
      break;
    }
    case Instruction::Status:
      break;
  }
  return out;
}

void VirtualBus::step(double dt) {
  if (!(dt > 0.0) || dt > 0.01 + 1e-12) throw ValidationError("bus step dt must be in (0, 0.01]");
  std::lock_guard lock(mu_);
  for (auto& [id, s] : servos_) s.step(dt);
  time_ += dt;
}

Bytes BusEndpoint::on_bytes(std::span<const std::uint8_t> bytes) {
  Bytes out;
  for (const auto& pkt : decoder_.feed(bytes)) {
    const auto* ins = std::get_if<dxl::InstructionPacket>(&pkt);
    if (!ins) continue;  // another device's status on a shared line
    ++frames_;
    for (const auto& st : bus_.handle(*ins)) {
      const Bytes b = dxl::encode(st);
      out.insert(out.end(), b.begin(), b.end());
    }
  }
  return out;
}

}  // namespace gex::bus
