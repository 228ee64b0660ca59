// SPDX-License-Identifier: Apache-2.0
// Configuration and the offline entry points behind the `gex` command line.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "gex/gesture.hpp"
#include "gex/kinematics.hpp"
#include "gex/protocol.hpp"
#include "gex/teleop.hpp"
#include "gex/virtual_bus.hpp"

namespace gex::gateway {

struct ServiceSettings {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8765;  // 0 picks a free port
  double state_rate_hz = 30.0;
  std::size_t client_queue = 16;  // state messages buffered per client before the oldest is dropped
  int socket_send_buffer = 65536;  // bytes; bounds how much stale state a slow client can have in flight
};

/// Everything a session needs. File references are resolved against the config file's directory
/// and loaded eagerly, so a config that loads is a config that runs.
struct GatewayConfig {
  std::filesystem::path source;  // empty when built in code
  std::filesystem::path glove_model_path, hand_model_path;
  std::filesystem::path glove_profile_path, hand_profile_path;
  std::filesystem::path scene_path;  // empty: no object
  HandModel glove_model, hand_model;
  bus::ServoProfile glove_profile = bus::ServoProfile::m077();
  bus::ServoProfile hand_profile = bus::ServoProfile::m288();
  teleop::Scene scene;
  teleop::SessionConfig session;
  ServiceSettings service;

  double control_rate_hz() const { return 1.0 / session.control_dt; }
};

/// Parses a config document; `base` resolves relative paths. Throws ParseError, ValidationError
/// or NotFoundError (missing referenced file).
GatewayConfig load_config(std::string_view text, const std::filesystem::path& base);
GatewayConfig load_config_file(const std::filesystem::path& path);

/// Parameter sections, shared by the config file and the live `set_params` message.
/// Absent keys keep the values in `base`.
RetargetConfig retarget_from_json(const nlohmann::json& j, RetargetConfig base = RetargetConfig::defaults());
teleop::DetectorParams detector_from_json(const nlohmann::json& j, teleop::DetectorParams base = {});
teleop::ImpedanceParams impedance_from_json(const nlohmann::json& j, teleop::ImpedanceParams base = {});
nlohmann::ordered_json to_json(const teleop::DetectorParams& p);
nlohmann::ordered_json to_json(const teleop::ImpedanceParams& p);

/// Session over the configured models, profiles and scene, starting at `initial_glove` (degrees)
/// or the glove's mid-range pose.
std::unique_ptr<teleop::Session> make_session(const GatewayConfig& config,
                                              const std::vector<double>* initial_glove_deg = nullptr);

/// Glove pose a fresh session starts from, in degrees.
std::vector<double> home_pose_deg(const HandModel& glove);

// ---- workspace ----

struct WorkspaceResult {
  std::size_t points = 0;
  double hull_volume = 0.0;  // m^3
};

/// Writes `x,y,z` lines (metres, base frame) and returns the hull volume of the cloud.
WorkspaceResult run_workspace(const HandModel& model, const std::string& finger, std::size_t n, std::uint64_t seed,
                              const std::filesystem::path& out_path);

// ---- offline retargeting ----

struct PinchReport {
  double glove_distance = 0.0;  // thumb-index tip distance on the last frame, metres
  double hand_distance = 0.0;
  bool is_pinch = false;        // glove distance within kPinchThreshold
};

inline constexpr double kPinchThreshold = 3e-3;

struct RetargetResult {
  std::size_t frames = 0;
  PinchReport pinch;
};

/// Reads a gesture file and writes one `{t, q_hand}` line per record.
RetargetResult run_retarget(const HandModel& glove, const HandModel& hand, const RetargetConfig& config,
                            const std::filesystem::path& in_gesture, const std::filesystem::path& out_traj);

/// Thumb and index tip distance on each model for a glove pose and its hand counterpart.
PinchReport pinch_report(const HandModel& glove, const HandModel& hand, const JointVector& q_glove,
                         const JointVector& q_hand);

// ---- packet dump ----

struct DecodeResult {
  std::size_t frames = 0;
  std::size_t bad = 0;  // rejected frames plus unparseable input
  bool ok() const { return bad == 0; }
};

/// Prints one line per frame, e.g. `PING id=1 crc=ok`, and one `BAD ...` line per rejected frame.
DecodeResult run_decode(const dxl::Bytes& stream, std::ostream& out);

/// Hex text (pairs, optional whitespace) to bytes; invalid text counts as one bad input.
DecodeResult run_decode_hex(std::string_view hex, std::ostream& out);

/// Human-readable form of one packet.
std::string describe(const dxl::Packet& p);

// ---- headless replay ----

/// Steps through a gesture at a fixed control period: each call returns the latest record at or
/// before the current tick time, measured from the first record.
class GesturePlayer {
 public:
  GesturePlayer(std::vector<GestureRecord> records, double dt);
  bool done() const { return tick_ >= ticks_; }
  std::size_t ticks() const { return ticks_; }
  const std::vector<double>& next();

 private:
  std::vector<GestureRecord> records_;
  double dt_;
  std::size_t ticks_ = 0;
  std::size_t tick_ = 0;
  std::size_t cursor_ = 0;
};

struct ModeChange {
  double t = 0.0;
  teleop::FingerMode mode = teleop::FingerMode::Free;
};

struct ReplaySummary {
  std::size_t ticks = 0;
  double duration = 0.0;
  std::array<std::string, 3> fingers;
  std::array<bool, 3> ever_engaged{};
  std::array<double, 3> longest_contact{};     // seconds of uninterrupted contact
  std::array<double, 3> max_feedback_torque{};  // N·m, largest glove joint torque of the finger
  std::array<std::vector<ModeChange>, 3> timeline;

  std::size_t engaged_fingers() const;
  double grasp_persistence() const;  // longest contact among fingers that engaged
  nlohmann::ordered_json to_json() const;
};

/// Accumulates a summary from a report stream.
class SummaryBuilder {
 public:
  SummaryBuilder(const HandModel& glove, const HandModel& hand, double dt);
  void add(const teleop::TickReport& r);
  const ReplaySummary& summary() const { return summary_; }

 private:
  const HandModel* glove_;
  const HandModel* hand_;
  double dt_;
  std::array<double, 3> run_{};
  ReplaySummary summary_;
};

/// Runs the teleop loop over a gesture, one tick per record, writing a JSONL report line per tick.
ReplaySummary run_replay(const GatewayConfig& config, const std::vector<GestureRecord>& gesture,
                         std::ostream& report);

/// File form: writes `report_path` and `summary_path` (JSON).
ReplaySummary run_replay(const GatewayConfig& config, const std::filesystem::path& gesture_path,
                         const std::filesystem::path& report_path, const std::filesystem::path& summary_path);

}  // namespace gex::gateway
