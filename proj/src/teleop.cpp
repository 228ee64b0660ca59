// SPDX-License-Identifier: Apache-2.0
#include "gex/teleop.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "gex/gesture.hpp"

namespace gex::teleop {
namespace {


nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

Vec3 read_vec3(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ParseError(what + " must be an array of 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) throw ParseError(what + " must be an array of 3 numbers");
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

nlohmann::ordered_json frames_json(const std::vector<std::vector<JointFrame>>& frames) {
  auto out = nlohmann::ordered_json::array();
  for (const auto& finger : frames) {
    auto jf = nlohmann::ordered_json::array();
    for (const auto& fr : finger) {
      nlohmann::ordered_json e;
      e["p"] = vec_json(fr.position);
      auto r = nlohmann::json::array();
      for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < 3; ++k) r.push_back(fr.rotation(i, k));
      }
      e["R"] = r;
      jf.push_back(e);
    }
    out.push_back(jf);
  }
  return out;
}

std::vector<std::vector<JointFrame>> frames_of(const FkResult& fk) {
  std::vector<std::vector<JointFrame>> out;
  for (const auto& f : fk.fingers) {
    std::vector<JointFrame> v;
    for (const auto& t : f.joints) v.push_back({t.translation, t.rotation});
    v.push_back({f.tip, f.joints.empty() ? Mat3::Identity() : f.joints.back().rotation});
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

const char* to_string(FingerMode m) { return m == FingerMode::Engaged ? "Engaged" : "Free"; }

void DetectorParams::validate() const {
  if (!(release_ma >= 0.0) || !(release_ma < engage_ma)) {
    throw ValidationError("detector: need 0 <= release threshold < engage threshold");
  }
  if (debounce_cycles < 1) throw ValidationError("detector: debounce cycles must be >= 1");
}

FingerMode update_mode(const DetectorParams& params, DetectorState& state, std::span<const double> currents_ma) {
  double peak = 0.0;
  for (double c : currents_ma) peak = std::max(peak, std::abs(c));
  const bool toward = state.mode == FingerMode::Free ? peak >= params.engage_ma : peak <= params.release_ma;
  state.streak = toward ? state.streak + 1 : 0;
  if (state.streak >= params.debounce_cycles) {
    state.mode = state.mode == FingerMode::Free ? FingerMode::Engaged : FingerMode::Free;
    state.streak = 0;
  }
  return state.mode;
}

void ImpedanceParams::validate(double rated_torque) const {
  if (kp < 0.0 || kd < 0.0) throw ValidationError("impedance: kp and kd must be non-negative");
  if (!(torque_cap > 0.0) || torque_cap > rated_torque) {
    throw ValidationError("impedance: torque cap must be positive and at most the glove rated torque");
  }
}

Eigen::VectorXd impedance_torque(const ImpedanceParams& p, const Eigen::VectorXd& q_contact, const Eigen::VectorXd& q,
                                 const Eigen::VectorXd& omega) {
  if (q_contact.size() != q.size() || omega.size() != q.size()) throw DimensionError("impedance_torque: size mismatch");
  Eigen::VectorXd tau = p.kp * (q_contact - q) - p.kd * omega;
  return tau.cwiseMax(-p.torque_cap).cwiseMin(p.torque_cap);
}

void SceneObject::validate() const {
  if (shape != "cylinder") throw ValidationError("scene: unsupported shape '" + shape + "'");
  if (!(radius > 0.0) || !(height > 0.0) || !(stiffness > 0.0)) {
    throw ValidationError("scene: radius, height and stiffness must be positive");
  }
  if (!center.allFinite()) throw ValidationError("scene: center must be finite");
}

void Scene::validate() const {
  if (!(tip_radius > 0.0)) throw ValidationError("scene: tip radius must be positive");
  if (object) object->validate();
}

Scene load_scene(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("scene document: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("scene document: top level must be an object");
  Scene s;
  try {
    s.tip_radius = doc.value("tip_radius", s.tip_radius);
    if (doc.contains("object") && !doc["object"].is_null()) {
      const auto& o = doc["object"];
      SceneObject obj;
      obj.shape = o.value("shape", obj.shape);
      obj.center = read_vec3(o.at("center"), "scene object center");
      obj.radius = o.value("radius", obj.radius);
      obj.height = o.value("height", obj.height);
      obj.stiffness = o.value("stiffness", obj.stiffness);
      s.object = obj;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scene document: ") + e.what());
  }
  s.validate();
  return s;
}

Scene load_scene_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open scene file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_scene(ss.str());
}

nlohmann::ordered_json scene_to_json(const Scene& scene) {
  nlohmann::ordered_json j;
  j["tip_radius"] = scene.tip_radius;
  if (scene.object) {
    const auto& o = *scene.object;
    j["object"] = {{"shape", o.shape},
                   {"center", vec_json(o.center)},
                   {"radius", o.radius},
                   {"height", o.height},
                   {"stiffness", o.stiffness}};
  } else {
    j["object"] = nullptr;
  }
  return j;
}

std::pair<double, Vec3> cylinder_distance(const SceneObject& obj, const Vec3& p) {
  const Vec3 d = p - obj.center;
  const double rho = std::hypot(d.x(), d.y());
  const Vec3 radial = rho > 1e-12 ? Vec3(d.x() / rho, d.y() / rho, 0.0) : Vec3(1.0, 0.0, 0.0);
  const Vec3 axial(0.0, 0.0, d.z() >= 0.0 ? 1.0 : -1.0);
  const double qr = rho - obj.radius;
  const double qz = std::abs(d.z()) - 0.5 * obj.height;
  if (qr <= 0.0 && qz <= 0.0) {
    // Inside: nearest face decides the normal.
    return qr >= qz ? std::pair{qr, radial} : std::pair{qz, axial};
  }
  if (qz <= 0.0) return {qr, radial};
  if (qr <= 0.0) return {qz, axial};
  const double dist = std::hypot(qr, qz);
  return {dist, ((qr * radial + qz * axial) / dist).eval()};
}

std::vector<Contact> contact_forces(const Scene& scene, const std::vector<Vec3>& tips) {
  std::vector<Contact> out(tips.size());
  if (!scene.object) return out;
  for (std::size_t f = 0; f < tips.size(); ++f) {
    const auto [sd, n] = cylinder_distance(*scene.object, tips[f]);
    const double depth = scene.tip_radius - sd;
    if (depth > 0.0) out[f] = {scene.object->stiffness * depth * n, depth, true};
  }
  return out;
}

Eigen::VectorXd simulated_present_current(const HandModel& hand, std::size_t finger, const Eigen::VectorXd& q_finger,
                                          const Vec3& force, double torque_constant) {
  const Eigen::Matrix3Xd J = position_jacobian(hand, finger, q_finger);
  return (J.transpose() * force) / torque_constant * 1e3;
}

nlohmann::ordered_json to_json(const TickReport& r, bool include_frames) {
  nlohmann::ordered_json j;
  j["t"] = r.timestamp;
  j["q_glove"] = r.q_glove;
  j["q_hand"] = r.q_hand;
  j["q_hand_cmd"] = r.q_hand_cmd;
  auto tips = [](const std::array<Vec3, 3>& a) {
    auto arr = nlohmann::json::array();
    for (const auto& v : a) arr.push_back(vec_json(v));
    return arr;
  };
  j["tips_glove"] = tips(r.tips_glove);
  j["tips_hand"] = tips(r.tips_hand);
  j["modes"] = {to_string(r.modes[0]), to_string(r.modes[1]), to_string(r.modes[2])};
  j["contact_flags"] = {r.contact_flags[0], r.contact_flags[1], r.contact_flags[2]};
  j["feedback_torques"] = r.feedback_torques;
  j["contact_forces"] = tips(r.contact_forces);
  j["hand_currents"] = r.hand_currents;
  j["solver_iterations"] = r.solver_iterations;
  if (include_frames) {
    j["frames_glove"] = frames_json(r.frames_glove);
    j["frames_hand"] = frames_json(r.frames_hand);
  }
  return j;
}

void SessionConfig::validate() const {
  retarget.validate();
  detector.validate();
  if (!(control_dt > 0.0) || substeps < 1 || control_dt / substeps > 0.01) {
    throw ValidationError("session: control_dt/substeps must be in (0, 0.01]");
  }
  if (hand_goal_pwm < 0 || hand_goal_pwm > bus::kPwmFullScale) throw ValidationError("session: hand goal PWM out of range");
  if (human_stiffness < 0.0 || human_damping < 0.0) throw ValidationError("session: human spring must be non-negative");
}

Session::Session(HandModel glove_model, HandModel hand_model, const bus::ServoProfile& glove_profile,
                 const bus::ServoProfile& hand_profile, Scene scene, SessionConfig config,
                 std::optional<JointVector> initial_glove)
    : glove_model_(std::move(glove_model)),
      hand_model_(std::move(hand_model)),
      glove_profile_(glove_profile),
      hand_profile_(hand_profile),
      scene_(std::move(scene)),
      config_(std::move(config)),
      retargeter_(glove_model_, hand_model_, config_.retarget) {
  config_.validate();
  config_.impedance.validate(glove_profile_.rated_torque);
  scene_.validate();
  if (hand_model_.fingers.size() != 3) throw ValidationError("session: hand must have three fingers");
  for (const auto& f : hand_model_.fingers) glove_model_.finger_index(f.name);

  target_ = initial_glove ? *initial_glove : glove_model_.home_pose();
  if (static_cast<std::size_t>(target_.size()) != glove_model_.dof()) {
    throw DimensionError("session: initial glove pose has wrong size");
  }
  sdk::attach_model(glove_bus_, glove_model_, glove_profile_, clamp_to_limits(glove_model_, target_));
  sdk::attach_model(hand_bus_, hand_model_, hand_profile_);
  glove_capture_ = std::make_shared<CaptureTransport>(std::make_shared<DirectTransport>(glove_bus_));
  hand_capture_ = std::make_shared<CaptureTransport>(std::make_shared<DirectTransport>(hand_bus_));
  glove_ = std::make_unique<sdk::Glove>(glove_model_, glove_capture_, clock_);
  hand_ = std::make_unique<sdk::Hand>(hand_model_, hand_capture_, clock_);
  glove_->connect(bus::kPwmFullScale, false);
  hand_->connect(config_.hand_goal_pwm, true);
  for (auto& id : hand_bus_.ids()) hand_bus_.servo(id).set_sensed_current(0.0);
}

void Session::set_glove_target(const JointVector& q) {
  if (static_cast<std::size_t>(q.size()) != glove_model_.dof()) throw DimensionError("glove target has wrong size");
  if (!q.allFinite()) throw ValidationError("glove target must be finite");
  target_ = q;
}

void Session::set_scene(Scene scene) {
  scene.validate();
  scene_ = std::move(scene);
}

void Session::set_detector(const DetectorParams& p) {
  p.validate();
  config_.detector = p;
}

void Session::set_impedance(const ImpedanceParams& p) {
  p.validate(glove_profile_.rated_torque);
  config_.impedance = p;
}

std::vector<std::size_t> Session::glove_motors(std::size_t finger) const {
  const std::size_t gf = glove_model_.finger_index(hand_model_.fingers[finger].name);
  const std::size_t off = glove_model_.joint_offset(gf);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < glove_model_.fingers[gf].joints.size(); ++i) out.push_back(off + i);
  return out;
}

std::vector<std::size_t> Session::hand_motors(std::size_t finger) const {
  const std::size_t off = hand_model_.joint_offset(finger);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < hand_model_.fingers[finger].joints.size(); ++i) out.push_back(off + i);
  return out;
}

void Session::apply_human_torques() {
  const auto joints = glove_model_.joints();
  for (std::size_t i = 0; i < joints.size(); ++i) {
    auto& s = glove_bus_.servo(static_cast<std::uint8_t>(joints[i]->motor_id));
    const double q = sdk::shaft_to_joint(s.theta(), joints[i]->zero_tick);
    s.set_external_torque(config_.human_stiffness * (target_[static_cast<Eigen::Index>(i)] - q) -
                          config_.human_damping * s.omega());
  }
}

void Session::engage(std::size_t finger, const Eigen::VectorXd& q_glove) {
  const auto motors = glove_motors(finger);
  const std::vector<std::int64_t> zeros(motors.size(), 0), ones(motors.size(), 1);
  glove_->sync_write(bus::reg::kTorqueEnable, 1, motors, zeros);
  glove_->sync_write(bus::reg::kOperatingMode, 1, motors,
                     std::vector<std::int64_t>(motors.size(), static_cast<std::int64_t>(bus::OperatingMode::Current)));
  glove_->sync_write(bus::reg::kTorqueEnable, 1, motors, ones);
  Eigen::VectorXd latch(static_cast<Eigen::Index>(motors.size()));
  for (std::size_t k = 0; k < motors.size(); ++k) latch[static_cast<Eigen::Index>(k)] = q_glove[static_cast<Eigen::Index>(motors[k])];
  q_contact_[finger] = latch;
}

void Session::release(std::size_t finger) {
  const auto motors = glove_motors(finger);
  glove_->sync_write(bus::reg::kTorqueEnable, 1, motors, std::vector<std::int64_t>(motors.size(), 0));
}

TickReport Session::tick(bool step_bus) {
  TickReport r;

  // Glove: positions only while Free.
  const sdk::JointState gs = glove_->read_state();
  const JointVector qg = to_radians(gs.position_deg);

  // A tick without time advance does not commit the warm start, so it can be repeated.
  const Retargeter warm = retargeter_;
  SolveStats stats;
  JointVector qh_cmd;
  try {
    qh_cmd = retargeter_.step(qg, &stats);
  } catch (const RetargetError& e) {
    throw SessionError(std::string("retarget failed: ") + e.what());
  }
  if (!qh_cmd.allFinite()) throw SessionError("retarget produced non-finite joints");
  // Same conversions as the gesture files, so offline retargeting reproduces these values bit for bit.
  const std::vector<double> cmd_deg = to_degrees(qh_cmd);
  hand_->setj_all(cmd_deg);

  if (step_bus) {
    const double h = config_.control_dt / config_.substeps;
    for (int s = 0; s < config_.substeps; ++s) {
      apply_human_torques();
      glove_bus_.step(h);
      hand_bus_.step(h);
    }
    clock_.advance(config_.control_dt);
    time_ += config_.control_dt;
  } else {
    retargeter_ = warm;
  }
  ++ticks_;

  // Hand readback, scene contact, simulated current sensing.
  const std::vector<double> qh_deg = hand_->getj();
  const JointVector qh = to_radians(qh_deg);
  const FkResult fk_hand = forward_kinematics(hand_model_, qh);
  std::vector<Vec3> tips;
  for (const auto& f : fk_hand.fingers) tips.push_back(f.tip);
  const auto contacts = contact_forces(scene_, tips);
  const auto hand_joints = hand_model_.joints();
  for (std::size_t f = 0; f < 3; ++f) {
    const auto motors = hand_motors(f);
    const auto off = static_cast<Eigen::Index>(motors.front());
    const Eigen::VectorXd qf = qh.segment(off, static_cast<Eigen::Index>(motors.size()));
    const Eigen::VectorXd ma =
        simulated_present_current(hand_model_, f, qf, contacts[f].force, hand_profile_.torque_constant);
    for (std::size_t k = 0; k < motors.size(); ++k) {
      hand_bus_.servo(static_cast<std::uint8_t>(hand_joints[motors[k]]->motor_id))
          .set_sensed_current(ma[static_cast<Eigen::Index>(k)]);
    }
  }
  std::vector<std::size_t> all_hand(hand_joints.size());
  for (std::size_t i = 0; i < all_hand.size(); ++i) all_hand[i] = i;
  const sdk::BulkRead cur = hand_->sync_read(bus::reg::kPresentCurrent, 2, all_hand);
  if (!cur.complete()) throw SessionError("hand current read incomplete");
  r.hand_currents.resize(all_hand.size());
  for (std::size_t i = 0; i < all_hand.size(); ++i) r.hand_currents[i] = static_cast<double>(*cur.values[i]);

  // Mode updates and glove feedback.
  r.feedback_torques.assign(glove_model_.dof(), 0.0);
  std::vector<std::size_t> fb_motors;
  std::vector<std::int64_t> fb_values;
  for (std::size_t f = 0; f < 3; ++f) {
    const auto motors = hand_motors(f);
    std::vector<double> finger_ma;
    for (auto m : motors) finger_ma.push_back(r.hand_currents[m]);
    const FingerMode before = detectors_[f].mode;
    const FingerMode after = update_mode(config_.detector, detectors_[f], finger_ma);
    if (before == FingerMode::Free && after == FingerMode::Engaged) engage(f, qg);
    if (before == FingerMode::Engaged && after == FingerMode::Free) release(f);
    r.modes[f] = after;
    r.contact_flags[f] = contacts[f].in_contact;
    r.contact_forces[f] = contacts[f].force;
    if (after != FingerMode::Engaged) continue;

    const auto gm = glove_motors(f);
    Eigen::VectorXd q(static_cast<Eigen::Index>(gm.size())), w(static_cast<Eigen::Index>(gm.size()));
    for (std::size_t k = 0; k < gm.size(); ++k) {
      q[static_cast<Eigen::Index>(k)] = qg[static_cast<Eigen::Index>(gm[k])];
      w[static_cast<Eigen::Index>(k)] = gs.velocity_rad_s[gm[k]];
    }
    const Eigen::VectorXd tau = impedance_torque(config_.impedance, q_contact_[f], q, w);
    for (std::size_t k = 0; k < gm.size(); ++k) {
      const double t = tau[static_cast<Eigen::Index>(k)];
      r.feedback_torques[gm[k]] = t;
      fb_motors.push_back(gm[k]);
      fb_values.push_back(std::clamp<std::int64_t>(std::llround(t / glove_profile_.torque_constant * 1e3), -1750, 1750));
    }
  }
  if (!fb_motors.empty()) glove_->sync_write(bus::reg::kGoalCurrent, 2, fb_motors, fb_values);

  const FkResult fk_glove = forward_kinematics(glove_model_, qg);
  r.timestamp = time_;
  r.q_glove = gs.position_deg;
  r.q_hand = qh_deg;
  r.q_hand_cmd = cmd_deg;
  for (std::size_t f = 0; f < 3; ++f) {
    r.tips_hand[f] = fk_hand.fingers[f].tip;
    r.tips_glove[f] = fk_glove.fingers[glove_model_.finger_index(hand_model_.fingers[f].name)].tip;
  }
  r.frames_glove = frames_of(fk_glove);
  r.frames_hand = frames_of(fk_hand);
  r.solver_iterations = stats.iterations;
  return r;
}

}  // namespace gex::teleop
