// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <pty.h>
#include <unistd.h>

#include <cmath>
#include <random>
#include <thread>

#include <json.hpp>

#include "gex/transport.hpp"
#include "gex/virtual_bus.hpp"
#include "oracles.hpp"

namespace gex::bus {
namespace {

using dxl::Bytes;
using dxl::Instruction;
using dxl::InstructionPacket;
namespace err = dxl::error;

constexpr double kPi = std::numbers::pi;

double deg(double d) { return d * kPi / 180.0; }

void attach_hand(VirtualBus& bus, const ServoProfile& p = ServoProfile::m288(), int n = 11) {
  for (int id = 0; id < n; ++id) bus.attach(static_cast<std::uint8_t>(id), p);
}

std::uint8_t write_reg(VirtualBus& bus, std::uint8_t id, std::uint16_t addr, std::int64_t value, std::size_t width) {
  const auto st = bus.handle(dxl::build_write(id, addr, dxl::le_bytes(value, width)));
  EXPECT_EQ(st.size(), 1u);
  return st.empty() ? 0xFF : st[0].error;
}

std::int64_t read_reg(VirtualBus& bus, std::uint8_t id, std::uint16_t addr, std::uint16_t width, bool is_signed) {
  const auto st = bus.handle(dxl::build_read(id, addr, width));
  EXPECT_EQ(st.size(), 1u);
  EXPECT_EQ(st[0].error, err::kNone);
  return dxl::from_le(st[0].params, is_signed);
}

double angle_diff(double a, double b) {
  double d = std::remainder(a - b, 2.0 * kPi);
  return std::abs(d);
}

TEST(Profile, DocumentsMatchBuiltins) {
  const auto m288 = load_profile_file(std::string(GEX_DATA_DIR) + "/profiles/m288.json");
  const auto m077 = load_profile_file(std::string(GEX_DATA_DIR) + "/profiles/m077.json");
  EXPECT_EQ(profile_to_json(m288), profile_to_json(ServoProfile::m288()));
  EXPECT_EQ(profile_to_json(m077), profile_to_json(ServoProfile::m077()));
  EXPECT_DOUBLE_EQ(m288.rated_torque, 0.53);
  EXPECT_DOUBLE_EQ(m077.gear_ratio, 77.0);
}

TEST(Profile, GainsAreCriticallyDamped) {
  for (const auto& p : {ServoProfile::m288(), ServoProfile::m077()}) {
    EXPECT_NEAR(p.kd, 2.0 * std::sqrt(p.kp * p.rotor_inertia_eff), 1e-12) << p.model_name;
  }
}

TEST(Profile, InvalidDocumentsRejected) {
  EXPECT_THROW(load_profile("{"), ParseError);
  EXPECT_THROW(load_profile(R"({"model_name":"x"})"), ParseError);
  auto doc = nlohmann::json::parse(profile_to_json(ServoProfile::m288()));
  doc["ticks_per_rev"] = 1024;
  EXPECT_THROW(load_profile(doc.dump()), ValidationError);
  doc = nlohmann::json::parse(profile_to_json(ServoProfile::m288()));
  doc["rated_torque"] = 0.0;
  EXPECT_THROW(load_profile(doc.dump()), ValidationError);
}

TEST(Attach, ElevenServosEnumerate) {
  VirtualBus bus;
  attach_hand(bus);
  EXPECT_EQ(bus.size(), 11u);
  EXPECT_THROW(bus.attach(3, ServoProfile::m288()), ValidationError);
  EXPECT_THROW(bus.attach(254, ServoProfile::m288()), ValidationError);
  const auto& s = bus.servo(4);
  EXPECT_FALSE(s.torque_enabled());
  EXPECT_EQ(s.mode(), OperatingMode::Position);
}

TEST(Attach, BroadcastPingRespondsInAscendingOrder) {
  VirtualBus bus;
  for (int id : {7, 2, 9, 0, 5}) bus.attach(static_cast<std::uint8_t>(id), ServoProfile::m077());
  const auto st = bus.handle(dxl::build_ping(dxl::kBroadcastId));
  ASSERT_EQ(st.size(), 5u);
  const std::vector<int> expect{0, 2, 5, 7, 9};
  for (std::size_t i = 0; i < st.size(); ++i) {
    EXPECT_EQ(st[i].id, expect[i]);
    EXPECT_EQ(dxl::from_le({st[i].params.data(), 2}, false), 1190);
  }
}

TEST(Handle, UnknownIdIsSilent) {
  VirtualBus bus;
  attach_hand(bus, ServoProfile::m288(), 2);
  EXPECT_TRUE(bus.handle(dxl::build_ping(40)).empty());
  EXPECT_TRUE(bus.handle(dxl::build_read(40, reg::kPresentPosition, 4)).empty());
}

TEST(Handle, WriteGoalPositionMovesServo) {
  VirtualBus bus;
  attach_hand(bus, ServoProfile::m288(), 1);
  EXPECT_EQ(write_reg(bus, 0, reg::kTorqueEnable, 1, 1), err::kNone);
  EXPECT_EQ(write_reg(bus, 0, reg::kGoalPosition, 2048 + 200, 4), err::kNone);
  const double before = bus.servo(0).theta();
  bus.step(0.005);
  EXPECT_GT(bus.servo(0).theta(), before);
}

TEST(Handle, ReadPresentPositionReportsTicks) {
  VirtualBus bus;
  attach_hand(bus, ServoProfile::m288(), 1);
  bus.servo(0).set_state(deg(123.4), 0.0);
  const auto ticks = read_reg(bus, 0, reg::kPresentPosition, 4, true);
  EXPECT_EQ(ticks, std::lround(deg(123.4) / kTickRad));
}

TEST(Handle, SyncWriteUpdatesAllSilently) {
  VirtualBus bus;
  attach_hand(bus);
  std::vector<dxl::SyncEntry> entries;
  for (std::uint8_t id = 0; id < 11; ++id) entries.push_back({id, dxl::le_bytes(1500 + 10 * id, 4)});
  EXPECT_TRUE(bus.handle(dxl::build_sync_write(reg::kGoalPosition, 4, entries)).empty());
  for (std::uint8_t id = 0; id < 11; ++id) {
    EXPECT_EQ(bus.servo(id).register_value(reg::kGoalPosition), 1500 + 10 * id);
  }
}

TEST(Handle, SyncReadRespondsInListedOrder) {
  VirtualBus bus;
  attach_hand(bus, ServoProfile::m288(), 5);
  const std::vector<std::uint8_t> ids{4, 1, 77, 3};
  const auto st = bus.handle(dxl::build_sync_read(reg::kPresentPosition, 4, ids));
  ASSERT_EQ(st.size(), 3u);
  EXPECT_EQ(st[0].id, 4);
  EXPECT_EQ(st[1].id, 1);
  EXPECT_EQ(st[2].id, 3);
  for (const auto& s : st) EXPECT_EQ(s.params.size(), 4u);
}

TEST(Handle, BroadcastWriteHasNoResponse) {
  VirtualBus bus;
  attach_hand(bus, ServoProfile::m288(), 3);
  EXPECT_TRUE(bus.handle(dxl::build_write(dxl::kBroadcastId, reg::kTorqueEnable, Bytes{1})).empty());
  for (std::uint8_t id = 0; id < 3; ++id) EXPECT_TRUE(bus.servo(id).torque_enabled());
}

TEST(Handle, TorqueEnableLatchesEeprom) {
  VirtualBus bus;
  attach_hand(bus, ServoProfile::m288(), 1);
  EXPECT_EQ(write_reg(bus, 0, reg::kOperatingMode, 0, 1), err::kNone);
  EXPECT_EQ(write_reg(bus, 0, reg::kTorqueEnable, 1, 1), err::kNone);
  EXPECT_EQ(write_reg(bus, 0, reg::kOperatingMode, 3, 1), err::kAccess);
  EXPECT_EQ(bus.servo(0).mode(), OperatingMode::Current);
  EXPECT_EQ(write_reg(bus, 0, reg::kTorqueEnable, 0, 1), err::kNone);
  EXPECT_EQ(write_reg(bus, 0, reg::kOperatingMode, 3, 1), err::kNone);
}

TEST(Handle, WriteValidation) {
  VirtualBus bus;
  attach_hand(bus, ServoProfile::m288(), 1);
  EXPECT_EQ(write_reg(bus, 0, 117, 1, 1), err::kAccess);                      // mid-register
  EXPECT_EQ(write_reg(bus, 0, reg::kPresentPosition, 10, 4), err::kAccess);    // read-only
  EXPECT_EQ(write_reg(bus, 0, 200, 1, 1), err::kAccess);                      // unmapped
  EXPECT_EQ(write_reg(bus, 0, reg::kGoalPosition, 5000, 4), err::kDataLimit);
  EXPECT_EQ(write_reg(bus, 0, reg::kGoalPwm, -900, 2), err::kDataLimit);
  EXPECT_EQ(write_reg(bus, 0, reg::kOperatingMode, 2, 1), err::kDataLimit);
  EXPECT_EQ(write_reg(bus, 0, reg::kGoalPosition, 100, 2), err::kDataLength);
  EXPECT_EQ(write_reg(bus, 0, reg::kGoalCurrent, 100, 2), err::kAccess);  // position mode
  EXPECT_EQ(write_reg(bus, 0, reg::kOperatingMode, 0, 1), err::kNone);
  // Two contiguous registers in one write.
  Bytes both = dxl::le_bytes(300, 2);
  for (auto b : dxl::le_bytes(-200, 2)) both.push_back(b);
  const auto st = bus.handle(dxl::build_write(0, reg::kGoalPwm, both));
  ASSERT_EQ(st.size(), 1u);
  EXPECT_EQ(st[0].error, err::kNone);
  EXPECT_EQ(bus.servo(0).register_value(reg::kGoalPwm), 300);
  EXPECT_EQ(bus.servo(0).register_value(reg::kGoalCurrent), -200);
}

TEST(Handle, ReadValidation) {
  VirtualBus bus;
  attach_hand(bus, ServoProfile::m288(), 1);
  auto st = bus.handle(dxl::build_read(0, 250, 10));
  ASSERT_EQ(st.size(), 1u);
  EXPECT_EQ(st[0].error, err::kAccess);
  st = bus.handle(InstructionPacket{0, Instruction::Read, {1, 2}});
  ASSERT_EQ(st.size(), 1u);
  EXPECT_EQ(st[0].error, err::kDataLength);
}

TEST(Handle, TorqueEnableHoldsCurrentPosition) {
  VirtualBus bus;
  attach_hand(bus, ServoProfile::m288(), 1);
  bus.servo(0).set_state(deg(200), 0.0);
  write_reg(bus, 0, reg::kTorqueEnable, 1, 1);
  EXPECT_EQ(bus.servo(0).register_value(reg::kGoalPosition), bus.servo(0).register_value(reg::kPresentPosition));
  for (int i = 0; i < 100; ++i) bus.step(0.005);
  EXPECT_LT(angle_diff(bus.servo(0).theta(), deg(200)), deg(0.5));
}

TEST(Dynamics, TorqueDisabledIsStatic) {
  VirtualBus bus;
  attach_hand(bus, ServoProfile::m288(), 1);
  const double t0 = bus.servo(0).theta();
  for (int i = 0; i < 200; ++i) bus.step(0.01);
  EXPECT_EQ(bus.servo(0).theta(), t0);
}

// Time until within 0.5 deg of goal and staying there; negative if never.
double settle_time(double dt, std::vector<double>* trace) {
  VirtualBus bus;
  bus.attach(0, ServoProfile::m288(), kPi);
  write_reg(bus, 0, reg::kTorqueEnable, 1, 1);
  write_reg(bus, 0, reg::kGoalPosition, 2048 + 1024, 4);
  const double goal = kPi + kPi / 2.0;
  double settled = -1.0;
  const int steps = static_cast<int>(std::lround(1.0 / dt));
  for (int i = 1; i <= steps; ++i) {
    bus.step(dt);
    const double e = std::abs(bus.servo(0).theta() - goal);
    if (e <= deg(0.5)) {
      if (settled < 0) settled = i * dt;
    } else {
      settled = -1.0;
    }
    if (trace) trace->push_back(bus.servo(0).theta());
  }
  return settled;
}

TEST(Dynamics, PositionModeSettlesWithinHalfSecond) {
  std::vector<double> coarse, fine;
  const double t_coarse = settle_time(0.01, &coarse);
  const double t_fine = settle_time(0.001, &fine);
  ASSERT_GT(t_coarse, 0.0);
  ASSERT_GT(t_fine, 0.0);
  EXPECT_LE(t_coarse, 0.5);
  EXPECT_LE(t_fine, 0.5);
  EXPECT_NEAR(t_coarse, t_fine, 0.02);
  // Trajectories agree at shared sample times.
  for (std::size_t i = 0; i < coarse.size(); ++i) EXPECT_NEAR(coarse[i], fine[10 * i + 9], deg(1.0));
}

TEST(Dynamics, M288SaturatesAtRatedTorque) {
  VirtualBus bus;
  bus.attach(0, ServoProfile::m288(), kPi);
  write_reg(bus, 0, reg::kTorqueEnable, 1, 1);
  write_reg(bus, 0, reg::kGoalPosition, 4095, 4);
  bus.servo(0).set_external_torque(-10.0);  // blocked shaft
  bus.step(0.001);
  EXPECT_DOUBLE_EQ(bus.servo(0).motor_torque(), 0.53);
  EXPECT_EQ(bus.servo(0).register_value(reg::kPresentCurrent), 530);
}

TEST(Dynamics, GoalPwmLimitsPositionModeTorque) {
  VirtualBus bus;
  bus.attach(0, ServoProfile::m288(), kPi);
  EXPECT_EQ(bus.servo(0).register_value(reg::kGoalPwm), kPwmFullScale);
  write_reg(bus, 0, reg::kGoalPwm, 600, 2);
  write_reg(bus, 0, reg::kTorqueEnable, 1, 1);
  write_reg(bus, 0, reg::kGoalPosition, 4095, 4);
  bus.servo(0).set_external_torque(-10.0);
  bus.step(0.001);
  EXPECT_NEAR(bus.servo(0).motor_torque(), 0.53 * 600.0 / 885.0, 1e-12);
}

TEST(Dynamics, SensedCurrentOverridesReadback) {
  VirtualBus bus;
  bus.attach(0, ServoProfile::m288(), kPi);
  bus.servo(0).set_sensed_current(-73.4);
  bus.step(0.001);
  EXPECT_EQ(bus.servo(0).register_value(reg::kPresentCurrent), -73);
  bus.servo(0).set_sensed_current(std::nullopt);
  EXPECT_EQ(bus.servo(0).register_value(reg::kPresentCurrent), 0);
}

TEST(Dynamics, CurrentAndPwmModes) {
  VirtualBus bus;
  bus.attach(0, ServoProfile::m077(), kPi);
  write_reg(bus, 0, reg::kOperatingMode, 0, 1);
  write_reg(bus, 0, reg::kTorqueEnable, 1, 1);
  write_reg(bus, 0, reg::kGoalCurrent, 300, 2);
  bus.step(0.001);
  EXPECT_NEAR(bus.servo(0).motor_torque(), 0.3 * 77.0 / 288.0, 1e-12);
  EXPECT_EQ(bus.servo(0).register_value(reg::kPresentCurrent), 300);

  write_reg(bus, 0, reg::kTorqueEnable, 0, 1);
  write_reg(bus, 0, reg::kOperatingMode, 16, 1);
  write_reg(bus, 0, reg::kTorqueEnable, 1, 1);
  write_reg(bus, 0, reg::kGoalPwm, -442, 2);
  bus.step(0.001);
  EXPECT_NEAR(bus.servo(0).motor_torque(), -0.215 * 442.0 / 885.0, 1e-12);
}

TEST(Dynamics, VelocityModeTracksGoal) {
  VirtualBus bus;
  bus.attach(0, ServoProfile::m288(), kPi);
  write_reg(bus, 0, reg::kOperatingMode, 1, 1);
  write_reg(bus, 0, reg::kTorqueEnable, 1, 1);
  write_reg(bus, 0, reg::kGoalVelocity, 100, 4);
  for (int i = 0; i < 200; ++i) bus.step(0.005);
  const double goal = 100 * kVelocityUnitRpm * 2 * kPi / 60;
  // Friction leaves a small steady-state lag of friction/kv.
  EXPECT_NEAR(bus.servo(0).omega(), goal - 5e-4 / 0.01, 1e-3);
  EXPECT_NEAR(bus.servo(0).register_value(reg::kPresentVelocity), (goal - 0.05) * 60 / (2 * kPi) / kVelocityUnitRpm, 1.0);
}

TEST(Dynamics, TorqueClampHoldsForRandomCommands) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VirtualBus bus;
  bus.attach(0, ServoProfile::m288(), kPi);
  bus.attach(1, ServoProfile::m077(), kPi);
  const int modes[] = {0, 1, 3, 16};
  double worst = 0.0;
  for (int seq = 0; seq < 100000; ++seq) {
    const auto id = static_cast<std::uint8_t>(seq & 1);
    auto& s = bus.servo(id);
    if (seq % 50 < 2) {
      write_reg(bus, id, reg::kTorqueEnable, 0, 1);
      write_reg(bus, id, reg::kOperatingMode, modes[rng() % 4], 1);
      write_reg(bus, id, reg::kTorqueEnable, 1, 1);
    }
    switch (s.mode()) {
      case OperatingMode::Position: write_reg(bus, id, reg::kGoalPosition, rng() % 4096, 4); break;
      case OperatingMode::Current: write_reg(bus, id, reg::kGoalCurrent, static_cast<int>(rng() % 3501) - 1750, 2); break;
      case OperatingMode::Velocity: write_reg(bus, id, reg::kGoalVelocity, static_cast<int>(rng() % 891) - 445, 4); break;
      case OperatingMode::Pwm: write_reg(bus, id, reg::kGoalPwm, static_cast<int>(rng() % 1771) - 885, 2); break;
    }
    s.set_external_torque((u(rng) - 0.5) * 2.0);
    bus.step(0.0005 + 0.0095 * u(rng));
    for (std::uint8_t k = 0; k < 2; ++k) {
      const auto& v = bus.servo(k);
      worst = std::max(worst, std::abs(v.motor_torque()) / v.profile().rated_torque);
      ASSERT_LE(std::abs(v.motor_torque()), v.profile().rated_torque + 1e-15);
      ASSERT_LE(std::abs(v.register_value(reg::kPresentCurrent) * 1e-3 * v.profile().torque_constant),
                v.profile().rated_torque + 0.5e-3 * v.profile().torque_constant);
    }
  }
  EXPECT_DOUBLE_EQ(worst, 1.0);  // the clamp was actually exercised
}

TEST(Dynamics, RegisterPhysicsCoherence) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  VirtualBus bus;
  bus.attach(0, ServoProfile::m288(), 0.0);
  write_reg(bus, 0, reg::kOperatingMode, 16, 1);
  write_reg(bus, 0, reg::kTorqueEnable, 1, 1);
  for (int i = 0; i < 20000; ++i) {
    if (i % 100 == 0) write_reg(bus, 0, reg::kGoalPwm, static_cast<int>(rng() % 1771) - 885, 2);
    if (i % 1000 == 0) bus.servo(0).set_state(u(rng), 0.0);
    bus.step(0.001);
    const auto& s = bus.servo(0);
    const double readback = ticks_to_rad(s.register_value(reg::kPresentPosition));
    ASSERT_LE(angle_diff(readback, wrap_angle(s.theta())), 0.5 * kTickRad + 1e-12);
    const auto ticks = s.register_value(reg::kPresentPosition);
    ASSERT_GE(ticks, 0);
    ASSERT_LT(ticks, 4096);
  }
  EXPECT_NEAR(kTickRad * 180.0 / kPi, 0.088, 0.0005);
}

TEST(Dynamics, KineticEnergyNonIncreasingWithoutDrive) {
  for (const auto& p : {ServoProfile::m288(), ServoProfile::m077()}) {
    VirtualBus bus;
    bus.attach(0, p, 1.0);
    write_reg(bus, 0, reg::kOperatingMode, 0, 1);
    write_reg(bus, 0, reg::kTorqueEnable, 1, 1);
    bus.servo(0).set_state(1.0, 7.0);
    double ke = 0.5 * p.rotor_inertia_eff * 49.0;
    for (int i = 0; i < 5000; ++i) {
      bus.step(0.001);
      const double w = bus.servo(0).omega();
      const double now = 0.5 * p.rotor_inertia_eff * w * w;
      ASSERT_LE(now, ke) << p.model_name << " step " << i;
      ke = now;
    }
    EXPECT_EQ(ke, 0.0);
  }
}

double coast_time(const ServoProfile& p, double omega0) {
  VirtualBus bus;
  bus.attach(0, p, 1.0);
  bus.servo(0).set_state(1.0, omega0);
  for (int i = 1; i <= 100000; ++i) {
    bus.step(0.001);
    if (bus.servo(0).omega() == 0.0) return i * 0.001;
  }
  return -1.0;
}

TEST(Dynamics, M077CoastsLongerThanM288) {
  const double t288 = coast_time(ServoProfile::m288(), 5.0);
  const double t077 = coast_time(ServoProfile::m077(), 5.0);
  ASSERT_GT(t288, 0.0);
  ASSERT_GT(t077, 0.0);
  EXPECT_GT(t077, t288);
  // Constant deceleration fc/J gives the analytic stop time.
  const auto p = ServoProfile::m288();
  EXPECT_NEAR(t288, 5.0 * p.rotor_inertia_eff / p.effective_friction(), 2e-3);
}

TEST(Dynamics, StepRejectsBadDt) {
  VirtualBus bus;
  EXPECT_THROW(bus.step(0.0), ValidationError);
  EXPECT_THROW(bus.step(0.02), ValidationError);
}

TEST(Endpoint, BackToBackFramesGetTwoResponses) {
  VirtualBus bus;
  attach_hand(bus, ServoProfile::m288(), 3);
  BusEndpoint ep(bus);
  Bytes in = dxl::encode(dxl::build_ping(1));
  const Bytes second = dxl::encode(dxl::build_ping(2));
  in.insert(in.end(), second.begin(), second.end());
  dxl::StreamDecoder dec;
  const auto out = dec.feed(ep.on_bytes(in));
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(std::get<dxl::StatusPacket>(out[0]).id, 1);
  EXPECT_EQ(std::get<dxl::StatusPacket>(out[1]).id, 2);
}

TEST(Endpoint, CorruptedFirstFrameIsSkipped) {
  VirtualBus bus;
  attach_hand(bus, ServoProfile::m288(), 3);
  BusEndpoint ep(bus);
  Bytes in = dxl::encode(dxl::build_ping(1));
  in[9] ^= 0x40;
  const Bytes second = dxl::encode(dxl::build_ping(2));
  in.insert(in.end(), second.begin(), second.end());
  dxl::StreamDecoder dec;
  const auto out = dec.feed(ep.on_bytes(in));
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(std::get<dxl::StatusPacket>(out[0]).id, 2);
  EXPECT_EQ(ep.resync_count(), 1u);
}

std::vector<dxl::Packet> collect(Transport& t, std::size_t want, std::chrono::milliseconds budget) {
  dxl::StreamDecoder dec;
  std::vector<dxl::Packet> got;
  const auto deadline = std::chrono::steady_clock::now() + budget;
  while (got.size() < want && std::chrono::steady_clock::now() < deadline) {
    for (auto b : t.read(std::chrono::milliseconds(5))) {
      auto p = dec.feed(std::span<const std::uint8_t>(&b, 1));  // byte at a time
      got.insert(got.end(), p.begin(), p.end());
    }
  }
  EXPECT_EQ(dec.resync_count(), 0u);
  return got;
}

TEST(Serve, MemoryLoopbackPing) {
  VirtualBus bus;
  attach_hand(bus);
  auto [client, device] = make_memory_pair();
  auto server = serve_transport(bus, device);
  client->write(dxl::encode(dxl::build_ping(dxl::kBroadcastId)));
  const auto got = collect(*client, 11, std::chrono::milliseconds(2000));
  ASSERT_EQ(got.size(), 11u);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(std::get<dxl::StatusPacket>(got[i]).id, i);
  client->close();
  for (int i = 0; i < 200 && server->running(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  EXPECT_FALSE(server->running());
}

TEST(Serve, CorruptionCountedOverTransport) {
  VirtualBus bus;
  attach_hand(bus, ServoProfile::m288(), 2);
  auto [client, device] = make_memory_pair();
  auto server = serve_transport(bus, device, {.baud = 0, .simulate_latency = false});
  Bytes in = dxl::encode(dxl::build_ping(0));
  in.back() ^= 1;
  const Bytes good = dxl::encode(dxl::build_ping(1));
  in.insert(in.end(), good.begin(), good.end());
  client->write(in);
  const auto got = collect(*client, 1, std::chrono::milliseconds(2000));
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(std::get<dxl::StatusPacket>(got[0]).id, 1);
  server->stop();
  EXPECT_EQ(server->resync_count(), 1u);
}

TEST(Serve, PseudoTerminalSerialDevice) {
  int master = -1, slave = -1;
  char name[256] = {};
  ASSERT_EQ(::openpty(&master, &slave, name, nullptr, nullptr), 0);
  VirtualBus bus;
  attach_hand(bus, ServoProfile::m288(), 4);
  auto device = std::make_shared<SerialTransport>(master);
  {
    termios tio{};
    ::tcgetattr(master, &tio);
    ::cfmakeraw(&tio);
    ::tcsetattr(master, TCSANOW, &tio);
  }
  auto server = serve_transport(bus, device);
  SerialTransport client(name, 1000000);
  ::close(slave);
  client.write(dxl::encode(dxl::build_sync_read(reg::kPresentPosition, 4, std::vector<std::uint8_t>{3, 0})));
  const auto got = collect(client, 2, std::chrono::milliseconds(2000));
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(std::get<dxl::StatusPacket>(got[0]).id, 3);
  EXPECT_EQ(dxl::from_le(std::get<dxl::StatusPacket>(got[1]).params, true), 2048);
  server->stop();
}

TEST(Serve, SerialRejectsMissingDeviceAndBadBaud) {
  EXPECT_THROW(SerialTransport("/nonexistent/tty", 1000000), TransportError);
  EXPECT_THROW(SerialTransport("/dev/null", 12345), TransportError);
}

TEST(Capture, RecordsWrittenFrames) {
  VirtualBus bus;
  attach_hand(bus, ServoProfile::m288(), 2);
  auto direct = std::make_shared<DirectTransport>(bus);
  CaptureTransport cap(direct);
  cap.write(dxl::encode(dxl::build_ping(1)));
  cap.write(dxl::encode(dxl::build_read(0, reg::kPresentPosition, 4)));
  const auto pk = cap.written_packets();
  ASSERT_EQ(pk.size(), 2u);
  EXPECT_EQ(pk[1].instruction, Instruction::Read);
  dxl::StreamDecoder dec;
  EXPECT_EQ(dec.feed(cap.read(std::chrono::microseconds(0))).size(), 2u);
}

}  // namespace
}  // namespace gex::bus
