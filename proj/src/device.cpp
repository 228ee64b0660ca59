// SPDX-License-Identifier: Apache-2.0
#include "gex/device.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

namespace gex::sdk {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

std::string error_text(std::uint8_t code) {
  switch (code & 0x7F) {
    case dxl::error::kResultFail: return "result fail";
    case dxl::error::kInstruction: return "instruction error";
    case dxl::error::kCrc: return "crc error";
    case dxl::error::kDataRange: return "data range error";
    case dxl::error::kDataLength: return "data length error";
    case dxl::error::kDataLimit: return "data limit error";
    case dxl::error::kAccess: return "access error";
    default: return "error " + std::to_string(code);
  }
}

std::mutex& registry_mutex() {
  static std::mutex mu;
  return mu;
}

std::map<std::string, TransportPtr>& registry() {
  static std::map<std::string, TransportPtr> ports;
  return ports;
}

}  // namespace

std::int64_t deg_to_ticks(double deg, int zero_tick) {
  return zero_tick + std::llround(deg / kDegPerTick);
}

double ticks_to_deg(std::int64_t ticks, int zero_tick) {
  return static_cast<double>(ticks - zero_tick) * kDegPerTick;
}

double joint_to_shaft(double q, int zero_tick) { return zero_tick * bus::kTickRad + q; }
double shaft_to_joint(double theta, int zero_tick) { return theta - zero_tick * bus::kTickRad; }

double SteadyClock::now() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

void SteadyClock::sleep(double seconds) {
  std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

void SimClock::sleep(double seconds) {
  const int n = static_cast<int>(std::llround(seconds / dt_));
  for (int i = 0; i < n; ++i) {
    for (auto* b : buses_) b->step(dt_);
  }
  t_ += n * dt_;
}

bool BulkRead::complete() const {
  for (const auto& v : values) {
    if (!v) return false;
  }
  return true;
}

std::vector<std::size_t> BulkRead::missing() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i]) out.push_back(i);
  }
  return out;
}

Device::Device(HandModel model, TransportPtr port, Clock& clock, DeviceOptions options)
    : model_(std::move(model)), port_(std::move(port)), clock_(clock), options_(options) {
  if (!port_) throw DeviceError("device requires a transport");
  joints_ = model_.joints();
  for (const auto* j : joints_) ids_.push_back(static_cast<std::uint8_t>(j->motor_id));
  torque_on_.assign(joints_.size(), false);
}

std::uint8_t Device::motor_id(std::size_t motor_index) const {
  if (motor_index >= ids_.size()) {
    throw NotFoundError("motor index " + std::to_string(motor_index) + " out of range (0-" +
                        std::to_string(ids_.size() - 1) + ")");
  }
  return ids_[motor_index];
}

void Device::require_connected() const {
  if (!connected_) throw NotConnectedError(model_.name + ": not connected");
}

void Device::send(const dxl::InstructionPacket& pkt) {
  if (!port_->is_open()) throw DeviceError(model_.name + ": transport closed");
  port_->write(dxl::encode(pkt));
}

std::vector<dxl::StatusPacket> Device::await(const std::vector<std::uint8_t>& ids) {
  std::vector<std::optional<dxl::StatusPacket>> slots(ids.size());
  std::size_t filled = 0;
  auto absorb = [&] {
    for (auto& st : pending_) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!slots[i] && ids[i] == st.id) {
          slots[i] = std::move(st);
          ++filled;
          break;
        }
      }
    }
    pending_.clear();
  };
  const bool synchronous = port_->synchronous();
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(options_.response_timeout);
  while (filled < ids.size()) {
    const auto now = std::chrono::steady_clock::now();
    if (now >= deadline) break;
    const auto left = std::chrono::duration_cast<std::chrono::microseconds>(deadline - now);
    const dxl::Bytes in = port_->read(std::min(left, std::chrono::microseconds(20000)));
    if (in.empty()) {
      if (synchronous) break;
      continue;
    }
    for (auto& p : decoder_.feed(in)) {
      if (auto* st = std::get_if<dxl::StatusPacket>(&p)) pending_.push_back(std::move(*st));
    }
    absorb();
  }
  std::vector<dxl::StatusPacket> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (slots[i]) {
      out.push_back(std::move(*slots[i]));
    } else {
      out.push_back({ids[i], 0xFF, {}});  // 0xFF marks a missing response
    }
  }
  return out;
}

dxl::StatusPacket Device::transact(const dxl::InstructionPacket& pkt) {
  send(pkt);
  auto st = await({pkt.id});
  if (st[0].error == 0xFF && st[0].params.empty()) {
    throw TimeoutError(model_.name + ": no response from motor id " + std::to_string(pkt.id));
  }
  if (st[0].error & 0x7F) {
    throw ServoError(pkt.id, st[0].error,
                     model_.name + ": motor id " + std::to_string(pkt.id) + " reported " + error_text(st[0].error));
  }
  return st[0];
}

void Device::write_one(std::size_t motor_index, std::uint16_t address, std::int64_t value, std::size_t width) {
  transact(dxl::build_write(motor_id(motor_index), address, dxl::le_bytes(value, width)));
}

void Device::connect(int goal_pwm, bool init) {
  if (goal_pwm < 0 || goal_pwm > bus::kPwmFullScale) {
    throw LimitError("goal_pwm must be within 0-" + std::to_string(bus::kPwmFullScale));
  }
  send(dxl::build_ping(dxl::kBroadcastId));
  const auto st = await(ids_);
  std::vector<int> absent;
  for (const auto& s : st) {
    if (s.error == 0xFF && s.params.empty()) absent.push_back(s.id);
  }
  if (!absent.empty()) {
    std::ostringstream msg;
    msg << model_.name << ": no response from motor id";
    for (std::size_t i = 0; i < absent.size(); ++i) msg << (i ? ", " : " ") << absent[i];
    throw DeviceError(msg.str());
  }
  connected_ = true;
  if (init) {
    std::vector<std::size_t> all(ids_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    sync_write(bus::reg::kGoalPwm, 2, all, std::vector<std::int64_t>(all.size(), goal_pwm));
    set_torque_all(true);
  }
}

void Device::disconnect() {
  connected_ = false;
  cache_.clear();
  cache_time_ = -1e300;
}

void Device::check_limits(std::size_t motor_index, double degrees) const {
  const JointSpec& j = *joints_.at(motor_index);
  const double lo = j.limit_lo * kRadToDeg, hi = j.limit_hi * kRadToDeg;
  if (!std::isfinite(degrees) || degrees < lo - 1e-9 || degrees > hi + 1e-9) {
    std::ostringstream msg;
    msg << model_.name << ": joint '" << j.name << "' target " << degrees << " deg outside [" << lo << ", " << hi
        << "]";
    throw LimitError(msg.str());
  }
  const auto ticks = deg_to_ticks(degrees, j.zero_tick);
  if (ticks < 0 || ticks >= bus::kTicksPerRev) throw LimitError(model_.name + ": joint '" + j.name + "' target outside the encoder range");
}

void Device::setj(std::size_t motor_index, double degrees) {
  require_connected();
  motor_id(motor_index);
  check_limits(motor_index, degrees);
  write_one(motor_index, bus::reg::kGoalPosition, deg_to_ticks(degrees, joints_[motor_index]->zero_tick), 4);
}

void Device::setj_all(const std::vector<double>& degrees) {
  require_connected();
  if (degrees.size() != joints_.size()) {
    throw DimensionError(model_.name + ": setj_all expects " + std::to_string(joints_.size()) + " values, got " +
                         std::to_string(degrees.size()));
  }
  std::vector<std::size_t> all(joints_.size());
  std::vector<std::int64_t> ticks(joints_.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    check_limits(i, degrees[i]);
    all[i] = i;
    ticks[i] = deg_to_ticks(degrees[i], joints_[i]->zero_tick);
  }
  sync_write(bus::reg::kGoalPosition, 4, all, ticks);
}

std::vector<double> Device::getj() {
  require_connected();
  std::vector<std::size_t> all(joints_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const BulkRead r = sync_read(bus::reg::kPresentPosition, 4, all);
  if (!r.complete()) {
    std::ostringstream msg;
    msg << model_.name << ": getj missing responses from motor index";
    for (auto i : r.missing()) msg << ' ' << i;
    throw TimeoutError(msg.str());
  }
  std::vector<double> out(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) out[i] = ticks_to_deg(*r.values[i], joints_[i]->zero_tick);
  cache_ = out;
  cache_time_ = clock_.now();
  return out;
}

JointState Device::read_state() {
  require_connected();
  constexpr std::uint16_t first = bus::reg::kPresentCurrent;
  constexpr std::uint16_t width = bus::reg::kPresentPosition + 4 - first;
  std::vector<std::uint8_t> ids = ids_;
  send(dxl::build_sync_read(first, width, ids));
  const auto st = await(ids);
  JointState out;
  std::vector<std::size_t> missing;
  for (std::size_t i = 0; i < st.size(); ++i) {
    if (st[i].error != 0 || st[i].params.size() != width) {
      missing.push_back(i);
      continue;
    }
    const auto* p = st[i].params.data();
    const auto cur = dxl::from_le({p, 2}, true);
    const auto vel = dxl::from_le({p + (bus::reg::kPresentVelocity - first), 4}, true);
    const auto pos = dxl::from_le({p + (bus::reg::kPresentPosition - first), 4}, true);
    out.current_ma.push_back(static_cast<double>(cur));
    out.velocity_rad_s.push_back(static_cast<double>(vel) * bus::kVelocityUnitRpm * 2.0 * std::numbers::pi / 60.0);
    out.position_deg.push_back(ticks_to_deg(pos, joints_[i]->zero_tick));
  }
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << model_.name << ": state read missing responses from motor index";
    for (auto i : missing) msg << ' ' << i;
    throw TimeoutError(msg.str());
  }
  cache_ = out.position_deg;
  cache_time_ = clock_.now();
  return out;
}

void Device::home() {
  require_connected();
  for (std::size_t i = 0; i < torque_on_.size(); ++i) {
    if (!torque_on_[i]) throw DeviceError(model_.name + ": home requires torque on (motor index " + std::to_string(i) + ")");
  }
  const JointVector home = model_.home_pose();
  std::vector<double> target(joints_.size());
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = home[static_cast<Eigen::Index>(i)] * kRadToDeg;
  setj_all(target);
  const double start = clock_.now();
  std::vector<double> q;
  while (true) {
    q = getj();
    double worst = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) worst = std::max(worst, std::abs(q[i] - target[i]));
    if (worst <= options_.home_tolerance_deg) return;
    if (clock_.now() - start >= options_.home_timeout) break;
    clock_.sleep(options_.home_poll);
  }
  std::ostringstream msg;
  msg << model_.name << ": home timed out; residuals (deg):";
  for (std::size_t i = 0; i < q.size(); ++i) msg << ' ' << joints_[i]->name << '=' << q[i] - target[i];
  throw TimeoutError(msg.str());
}

Vec3 Device::fk_finger(std::size_t finger_index) {
  require_connected();
  if (finger_index >= model_.fingers.size()) throw NotFoundError("finger index out of range");
  if (cache_.size() != joints_.size() || clock_.now() - cache_time_ > options_.cache_max_age) getj();
  JointVector q(static_cast<Eigen::Index>(cache_.size()));
  for (std::size_t i = 0; i < cache_.size(); ++i) q[static_cast<Eigen::Index>(i)] = cache_[i] / kRadToDeg;
  return forward_kinematics(model_, q).fingers[finger_index].tip;
}

Vec3 Device::fk_finger(std::string_view finger) { return fk_finger(model_.finger_index(finger)); }

void Device::set_torque(std::size_t motor_index, bool on) {
  require_connected();
  write_one(motor_index, bus::reg::kTorqueEnable, on ? 1 : 0, 1);
  torque_on_[motor_index] = on;
}

void Device::set_torque_all(bool on) {
  require_connected();
  std::vector<std::size_t> all(joints_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  sync_write(bus::reg::kTorqueEnable, 1, all, std::vector<std::int64_t>(all.size(), on ? 1 : 0));
  torque_on_.assign(joints_.size(), on);
}

void Device::set_mode(std::size_t motor_index, bus::OperatingMode mode) {
  require_connected();
  write_one(motor_index, bus::reg::kOperatingMode, static_cast<std::int64_t>(mode), 1);
}

void Device::set_goal_current(std::size_t motor_index, int milliamps) {
  require_connected();
  write_one(motor_index, bus::reg::kGoalCurrent, milliamps, 2);
}

void Device::sync_write(std::uint16_t address, std::uint16_t width, const std::vector<std::size_t>& motors,
                        const std::vector<std::int64_t>& values) {
  require_connected();
  if (motors.size() != values.size()) throw DimensionError("sync_write: motors and values differ in length");
  std::vector<dxl::SyncEntry> entries;
  entries.reserve(motors.size());
  for (std::size_t k = 0; k < motors.size(); ++k) entries.push_back({motor_id(motors[k]), dxl::le_bytes(values[k], width)});
  send(dxl::build_sync_write(address, width, entries));
}

BulkRead Device::sync_read(std::uint16_t address, std::uint16_t width, const std::vector<std::size_t>& motors,
                           bool is_signed) {
  require_connected();
  std::vector<std::uint8_t> ids;
  for (auto m : motors) ids.push_back(motor_id(m));
  send(dxl::build_sync_read(address, width, ids));
  const auto st = await(ids);
  BulkRead out;
  out.values.resize(motors.size());
  for (std::size_t k = 0; k < st.size(); ++k) {
    if (st[k].error == 0 && st[k].params.size() == width) out.values[k] = dxl::from_le(st[k].params, is_signed);
  }
  return out;
}

void register_memory_port(const std::string& name, TransportPtr port) {
  std::lock_guard lock(registry_mutex());
  registry()[name] = std::move(port);
}

void unregister_memory_port(const std::string& name) {
  std::lock_guard lock(registry_mutex());
  registry().erase(name);
}

TransportPtr open_port(const std::string& selection, long baud) {
  if (selection.rfind("mem:", 0) == 0) {
    std::lock_guard lock(registry_mutex());
    auto it = registry().find(selection.substr(4));
    if (it == registry().end()) throw NotFoundError("no in-memory port named '" + selection.substr(4) + "'");
    return it->second;
  }
  return std::make_shared<SerialTransport>(selection, baud);
}

void attach_model(bus::VirtualBus& bus, const HandModel& model, const bus::ServoProfile& profile) {
  attach_model(bus, model, profile, model.home_pose());
}

void attach_model(bus::VirtualBus& bus, const HandModel& model, const bus::ServoProfile& profile, const JointVector& q) {
  const auto joints = model.joints();
  if (static_cast<std::size_t>(q.size()) != joints.size()) throw DimensionError("attach_model: pose size mismatch");
  for (std::size_t i = 0; i < joints.size(); ++i) {
    bus.attach(static_cast<std::uint8_t>(joints[i]->motor_id), profile,
               joint_to_shaft(q[static_cast<Eigen::Index>(i)], joints[i]->zero_tick));
  }
}

}  // namespace gex::sdk
