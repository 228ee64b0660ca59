// SPDX-License-Identifier: Apache-2.0
// Closed teleoperation loop: glove -> retarget -> hand -> contact -> glove feedback.
#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gex/device.hpp"
#include "gex/kinematics.hpp"
#include "gex/retarget.hpp"
#include "gex/virtual_bus.hpp"

namespace gex::teleop {

enum class FingerMode { Free, Engaged };
const char* to_string(FingerMode m);

struct DetectorParams {
  double engage_ma = 60.0;
  double release_ma = 30.0;
  int debounce_cycles = 3;
  void validate() const;
};

/// Per-finger detector memory: current mode and how many consecutive cycles favour switching.
struct DetectorState {
  FingerMode mode = FingerMode::Free;
  int streak = 0;
};

/// Advances the debounced hysteresis detector by one cycle and returns the new mode.
FingerMode update_mode(const DetectorParams& params, DetectorState& state, std::span<const double> currents_ma);

struct ImpedanceParams {
  double kp = 0.3;          // N·m/rad
  double kd = 0.003;        // N·m·s/rad
  double torque_cap = 0.15; // N·m
  void validate(double rated_torque) const;
};

Eigen::VectorXd impedance_torque(const ImpedanceParams& params, const Eigen::VectorXd& q_contact,
                                 const Eigen::VectorXd& q, const Eigen::VectorXd& omega);

struct SceneObject {
  std::string shape = "cylinder";
  Vec3 center = Vec3::Zero();  // mid-height point on the axis, base frame
  double radius = 0.035;
  double height = 0.100;
  double stiffness = 500.0;
  void validate() const;
};

struct Scene {
  std::optional<SceneObject> object;
  double tip_radius = 0.008;
  void validate() const;
};

Scene load_scene(std::string_view text);
Scene load_scene_file(const std::string& path);
nlohmann::ordered_json scene_to_json(const Scene& scene);

struct Contact {
  Vec3 force = Vec3::Zero();
  double depth = 0.0;
  bool in_contact = false;
};

/// Signed distance from `p` to the solid cylinder surface (negative inside) and the outward normal.
std::pair<double, Vec3> cylinder_distance(const SceneObject& obj, const Vec3& p);
std::vector<Contact> contact_forces(const Scene& scene, const std::vector<Vec3>& tips);

/// τ = JᵀF of one finger expressed as motor current in mA.
Eigen::VectorXd simulated_present_current(const HandModel& hand, std::size_t finger, const Eigen::VectorXd& q_finger,
                                          const Vec3& force, double torque_constant);

struct JointFrame {
  Vec3 position;
  Mat3 rotation;
};

struct TickReport {
  double timestamp = 0.0;
  std::vector<double> q_glove;  // degrees
  std::vector<double> q_hand;   // degrees, measured
  std::vector<double> q_hand_cmd;  // degrees, retarget output sent as goals
  std::array<Vec3, 3> tips_glove{};
  std::array<Vec3, 3> tips_hand{};
  std::array<FingerMode, 3> modes{FingerMode::Free, FingerMode::Free, FingerMode::Free};
  std::array<bool, 3> contact_flags{};
  std::vector<double> feedback_torques;  // per glove joint, N·m
  std::array<Vec3, 3> contact_forces{};
  std::vector<double> hand_currents;     // per hand joint, mA
  std::vector<std::vector<JointFrame>> frames_glove;  // per finger: joints then tip
  std::vector<std::vector<JointFrame>> frames_hand;
  int solver_iterations = 0;
};

nlohmann::ordered_json to_json(const TickReport& r, bool include_frames = true);

struct SessionConfig {
  RetargetConfig retarget = RetargetConfig::defaults();
  DetectorParams detector;
  ImpedanceParams impedance;
  double control_dt = 0.01;
  int substeps = 10;
  int hand_goal_pwm = 600;
  /// Stand-in for the operator's finger: a spring-damper pulling each glove joint to its target.
  double human_stiffness = 2.0;
  double human_damping = 0.02;
  void validate() const;
};

class SessionError : public Error {
 public:
  using Error::Error;
};

/// Owns both virtual buses and devices. Not copyable or movable (models are referenced internally).
class Session {
 public:
  Session(HandModel glove_model, HandModel hand_model, const bus::ServoProfile& glove_profile,
          const bus::ServoProfile& hand_profile, Scene scene, SessionConfig config,
          std::optional<JointVector> initial_glove = std::nullopt);
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  /// Operator intention for the glove (radians); the glove joints follow through the human spring.
  void set_glove_target(const JointVector& q);
  const JointVector& glove_target() const { return target_; }

  /// One control cycle. With `step_bus` false the devices are not advanced and the retarget
  /// warm start is left unchanged.
  TickReport tick(bool step_bus = true);

  double time() const { return time_; }
  const Scene& scene() const { return scene_; }
  void set_scene(Scene scene);
  const SessionConfig& config() const { return config_; }
  void set_detector(const DetectorParams& p);
  void set_impedance(const ImpedanceParams& p);
  void reset_retarget() { retargeter_.reset(); }

  const HandModel& glove_model() const { return glove_model_; }
  const HandModel& hand_model() const { return hand_model_; }
  bus::VirtualBus& glove_bus() { return glove_bus_; }
  bus::VirtualBus& hand_bus() { return hand_bus_; }
  CaptureTransport& glove_wire() { return *glove_capture_; }
  CaptureTransport& hand_wire() { return *hand_capture_; }
  const std::array<DetectorState, 3>& detectors() const { return detectors_; }

 private:
  void apply_human_torques();
  void engage(std::size_t finger, const Eigen::VectorXd& q_glove_rad);
  void release(std::size_t finger);
  std::vector<std::size_t> glove_motors(std::size_t finger) const;
  std::vector<std::size_t> hand_motors(std::size_t finger) const;

  HandModel glove_model_;
  HandModel hand_model_;
  bus::ServoProfile glove_profile_;
  bus::ServoProfile hand_profile_;
  Scene scene_;
  SessionConfig config_;
  bus::VirtualBus glove_bus_;
  bus::VirtualBus hand_bus_;
  sdk::SimClock clock_;
  std::shared_ptr<CaptureTransport> glove_capture_;
  std::shared_ptr<CaptureTransport> hand_capture_;
  std::unique_ptr<sdk::Glove> glove_;
  std::unique_ptr<sdk::Hand> hand_;
  Retargeter retargeter_;
  JointVector target_;
  std::array<DetectorState, 3> detectors_{};
  std::array<Eigen::VectorXd, 3> q_contact_{};
  double time_ = 0.0;
  std::size_t ticks_ = 0;
};

}  // namespace gex::teleop
