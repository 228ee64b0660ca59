// SPDX-License-Identifier: Apache-2.0
#include "gex/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace gex::gateway {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw NotFoundError(std::string("cannot open ") + what + ": " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ParseError(std::string("config: '") + key + "' has the wrong type");
  }
}

const json& object_at(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_object()) throw ParseError(std::string("config: missing object '") + key + "'");
  return j.at(key);
}

std::string string_at(const json& j, const char* key, const char* section) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    throw ParseError(std::string("config: '") + section + "." + key + "' must be a path string");
  }
  return j.at(key).get<std::string>();
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* section) {
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      throw ParseError(std::string(section) + ": unknown key '" + k + "'");
    }
  }
}

}  // namespace

// ---- parameter sections ----

RetargetConfig retarget_from_json(const json& j, RetargetConfig c) {
  if (!j.is_object()) throw ParseError("retarget: expected an object");
  check_keys(j, {"alpha", "beta", "max_iters", "grad_tol", "step_rule", "fixed_step", "armijo_c", "shrink",
                 "max_backtracks", "key_vectors"},
             "retarget");
  c.alpha = get_or(j, "alpha", c.alpha);
  c.beta = get_or(j, "beta", c.beta);
  c.max_iters = get_or(j, "max_iters", c.max_iters);
  c.grad_tol = get_or(j, "grad_tol", c.grad_tol);
  c.fixed_step = get_or(j, "fixed_step", c.fixed_step);
  c.armijo_c = get_or(j, "armijo_c", c.armijo_c);
  c.shrink = get_or(j, "shrink", c.shrink);
  c.max_backtracks = get_or(j, "max_backtracks", c.max_backtracks);
  if (j.contains("step_rule")) {
    const auto rule = get_or<std::string>(j, "step_rule", "");
    if (rule == "fixed") {
      c.step_rule = StepRule::Fixed;
    } else if (rule == "backtracking") {
      c.step_rule = StepRule::Backtracking;
    } else {
      throw ValidationError("retarget: step_rule must be 'fixed' or 'backtracking'");
    }
  }
  if (j.contains("key_vectors")) {
    const json& kv = j.at("key_vectors");
    if (!kv.is_array()) throw ParseError("retarget: key_vectors must be an array");
    c.specs.clear();
    for (const auto& e : kv) {
      if (!e.is_object()) throw ParseError("retarget: key vector must be an object");
      KeyVectorSpec s;
      s.from = get_or<std::string>(e, "from", "palm");
      s.to = get_or<std::string>(e, "to", "");
      s.weight = get_or(e, "weight", 1.0);
      s.kind = s.from == "palm" ? KeyVectorKind::PalmToTip : KeyVectorKind::TipToTip;
      c.specs.push_back(s);
    }
  }
  c.validate();
  return c;
}

teleop::DetectorParams detector_from_json(const json& j, teleop::DetectorParams p) {
  if (!j.is_object()) throw ParseError("detector: expected an object");
  check_keys(j, {"engage_ma", "release_ma", "debounce_cycles"}, "detector");
  p.engage_ma = get_or(j, "engage_ma", p.engage_ma);
  p.release_ma = get_or(j, "release_ma", p.release_ma);
  p.debounce_cycles = get_or(j, "debounce_cycles", p.debounce_cycles);
  p.validate();
  return p;
}

teleop::ImpedanceParams impedance_from_json(const json& j, teleop::ImpedanceParams p) {
  if (!j.is_object()) throw ParseError("impedance: expected an object");
  check_keys(j, {"kp", "kd", "torque_cap"}, "impedance");
  p.kp = get_or(j, "kp", p.kp);
  p.kd = get_or(j, "kd", p.kd);
  p.torque_cap = get_or(j, "torque_cap", p.torque_cap);
  return p;
}

nlohmann::ordered_json to_json(const teleop::DetectorParams& p) {
  return {{"engage_ma", p.engage_ma}, {"release_ma", p.release_ma}, {"debounce_cycles", p.debounce_cycles}};
}

nlohmann::ordered_json to_json(const teleop::ImpedanceParams& p) {
  return {{"kp", p.kp}, {"kd", p.kd}, {"torque_cap", p.torque_cap}};
}

// ---- config ----

GatewayConfig load_config(std::string_view text, const fs::path& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("config: expected an object");
  check_keys(j, {"models", "profiles", "scene", "retarget", "detector", "impedance", "control_rate_hz", "substeps",
                 "hand_goal_pwm", "human", "service"},
             "config");

  GatewayConfig c;
  const json& models = object_at(j, "models");
  c.glove_model_path = resolve(base, string_at(models, "glove", "models"));
  c.hand_model_path = resolve(base, string_at(models, "hand", "models"));
  c.glove_model = load_model_file(c.glove_model_path.string());
  c.hand_model = load_model_file(c.hand_model_path.string());

  if (j.contains("profiles")) {
    const json& profiles = object_at(j, "profiles");
    if (profiles.contains("glove")) {
      c.glove_profile_path = resolve(base, string_at(profiles, "glove", "profiles"));
      c.glove_profile = bus::load_profile_file(c.glove_profile_path.string());
    }
    if (profiles.contains("hand")) {
      c.hand_profile_path = resolve(base, string_at(profiles, "hand", "profiles"));
      c.hand_profile = bus::load_profile_file(c.hand_profile_path.string());
    }
  }
  if (j.contains("scene") && !j.at("scene").is_null()) {
    if (!j.at("scene").is_string()) throw ParseError("config: 'scene' must be a path or null");
    c.scene_path = resolve(base, j.at("scene").get<std::string>());
    c.scene = teleop::load_scene_file(c.scene_path.string());
  }

  auto& s = c.session;
  if (j.contains("retarget")) s.retarget = retarget_from_json(j.at("retarget"));
  if (j.contains("detector")) s.detector = detector_from_json(j.at("detector"));
  if (j.contains("impedance")) s.impedance = impedance_from_json(j.at("impedance"));
  const double rate = get_or(j, "control_rate_hz", 100.0);
  if (!(rate > 0.0 && rate <= 1000.0)) throw ValidationError("config: control_rate_hz must be in (0, 1000]");
  s.control_dt = 1.0 / rate;
  s.substeps = get_or(j, "substeps", s.substeps);
  s.hand_goal_pwm = get_or(j, "hand_goal_pwm", s.hand_goal_pwm);
  if (j.contains("human")) {
    const json& h = object_at(j, "human");
    check_keys(h, {"stiffness", "damping"}, "human");
    s.human_stiffness = get_or(h, "stiffness", s.human_stiffness);
    s.human_damping = get_or(h, "damping", s.human_damping);
  }
  s.validate();
  s.impedance.validate(c.glove_profile.rated_torque);

  if (j.contains("service")) {
    const json& sv = object_at(j, "service");
    check_keys(sv, {"host", "port", "state_rate_hz", "client_queue", "socket_send_buffer"}, "service");
    c.service.host = get_or(sv, "host", c.service.host);
    const int port = get_or(sv, "port", static_cast<int>(c.service.port));
    if (port < 0 || port > 65535) throw ValidationError("service: port must be in [0, 65535]");
    c.service.port = static_cast<std::uint16_t>(port);
    c.service.state_rate_hz = get_or(sv, "state_rate_hz", c.service.state_rate_hz);
    c.service.client_queue = get_or(sv, "client_queue", c.service.client_queue);
    c.service.socket_send_buffer = get_or(sv, "socket_send_buffer", c.service.socket_send_buffer);
    if (c.service.socket_send_buffer < 4096) throw ValidationError("service: socket_send_buffer must be >= 4096");
    if (!(c.service.state_rate_hz > 0.0 && c.service.state_rate_hz <= rate)) {
      throw ValidationError("service: state_rate_hz must be in (0, control_rate_hz]");
    }
    if (c.service.client_queue < 1) throw ValidationError("service: client_queue must be >= 1");
  }

  // A session must be constructible from this config.
  for (const auto& f : c.hand_model.fingers) c.glove_model.finger_index(f.name);
  return c;
}

GatewayConfig load_config_file(const fs::path& path) {
  GatewayConfig c = load_config(read_text(path, "config file"), path.parent_path());
  c.source = path;
  return c;
}

std::vector<double> home_pose_deg(const HandModel& glove) { return to_degrees(glove.home_pose()); }

std::unique_ptr<teleop::Session> make_session(const GatewayConfig& c, const std::vector<double>* initial_glove_deg) {
  std::optional<JointVector> q0;
  if (initial_glove_deg) q0 = to_radians(*initial_glove_deg);
  return std::make_unique<teleop::Session>(c.glove_model, c.hand_model, c.glove_profile, c.hand_profile, c.scene,
                                           c.session, q0);
}

// ---- workspace ----

WorkspaceResult run_workspace(const HandModel& model, const std::string& finger, std::size_t n, std::uint64_t seed,
                              const fs::path& out_path) {
  if (n == 0) throw ValidationError("workspace: n must be >= 1");
  const WorkspaceSample ws = sample_workspace(model, finger, n, seed);
  std::ofstream out(out_path);
  if (!out) throw NotFoundError("cannot write " + out_path.string());
  out << std::setprecision(17);
  for (const auto& p : ws.points) out << p.x() << ',' << p.y() << ',' << p.z() << '\n';
  if (!out) throw Error("write failed: " + out_path.string());
  return {ws.points.size(), convex_hull_volume(ws.points)};
}

// ---- offline retargeting ----

PinchReport pinch_report(const HandModel& glove, const HandModel& hand, const JointVector& q_glove,
                         const JointVector& q_hand) {
  auto gap = [](const HandModel& m, const JointVector& q) {
    const FkResult fk = forward_kinematics(m, q);
    return (fk.fingers[m.finger_index("thumb")].tip - fk.fingers[m.finger_index("index")].tip).norm();
  };
  PinchReport r;
  r.glove_distance = gap(glove, q_glove);
  r.hand_distance = gap(hand, q_hand);
  r.is_pinch = r.glove_distance <= kPinchThreshold;
  return r;
}

RetargetResult run_retarget(const HandModel& glove, const HandModel& hand, const RetargetConfig& config,
                            const fs::path& in_gesture, const fs::path& out_traj) {
  const auto records = load_gesture(in_gesture.string(), glove.dof());
  if (records.empty()) throw ParseError("gesture file has no records: " + in_gesture.string());
  std::vector<JointVector> traj;
  traj.reserve(records.size());
  for (const auto& r : records) traj.push_back(to_radians(r.q_glove));
  const auto out = retarget_trajectory(glove, hand, traj, config);

  std::ofstream os(out_traj);
  if (!os) throw NotFoundError("cannot write " + out_traj.string());
  for (std::size_t k = 0; k < out.size(); ++k) os << trajectory_line(records[k].t, to_degrees(out[k])) << '\n';
  if (!os) throw Error("write failed: " + out_traj.string());
  return {out.size(), pinch_report(glove, hand, traj.back(), out.back())};
}

// ---- packet dump ----

std::string describe(const dxl::Packet& p) {
  std::ostringstream os;
  std::visit(
      [&](const auto& pkt) {
        using T = std::decay_t<decltype(pkt)>;
        if constexpr (std::is_same_v<T, dxl::InstructionPacket>) {
          os << dxl::instruction_name(static_cast<std::uint8_t>(pkt.instruction)) << " id=" << int(pkt.id);
          if (!pkt.params.empty()) os << " params=" << dxl::to_hex(pkt.params);
        } else {
          os << "STATUS id=" << int(pkt.id) << " error=" << int(pkt.error);
          if (!pkt.params.empty()) os << " params=" << dxl::to_hex(pkt.params);
        }
      },
      p);
  os << " crc=ok";
  return os.str();
}

DecodeResult run_decode(const dxl::Bytes& stream, std::ostream& out) {
  DecodeResult r;
  dxl::StreamDecoder dec;
  // Byte-wise feeding keeps good and bad frames in stream order.
  for (std::size_t i = 0; i < stream.size(); ++i) {
    for (const auto& p : dec.feed(std::span(stream).subspan(i, 1))) {
      out << describe(p) << '\n';
      ++r.frames;
    }
    for (const auto& rej : dec.take_rejects()) {
      out << "BAD id=" << int(rej.id) << " instruction=0x" << std::hex << std::uppercase << std::setw(2)
          << std::setfill('0') << int(rej.instruction) << std::dec << std::setfill(' ') << " reason=" << rej.reason
          << (rej.reason == "crc" ? " crc=bad" : "") << '\n';
      ++r.bad;
    }
  }
  if (dec.buffered() > 0) {
    out << "BAD trailing=" << dec.buffered() << " bytes (incomplete frame)\n";
    ++r.bad;
  }
  return r;
}

DecodeResult run_decode_hex(std::string_view hex, std::ostream& out) {
  dxl::Bytes bytes;
  try {
    bytes = dxl::from_hex(hex);
  } catch (const std::exception& e) {
    out << "BAD input: " << e.what() << '\n';
    return {0, 1};
  }
  return run_decode(bytes, out);
}

// ---- replay ----

GesturePlayer::GesturePlayer(std::vector<GestureRecord> records, double dt) : records_(std::move(records)), dt_(dt) {
  if (records_.empty()) throw ValidationError("replay: gesture has no records");
  if (!(dt > 0.0)) throw ValidationError("replay: dt must be > 0");
  const double span = records_.back().t - records_.front().t;
  ticks_ = static_cast<std::size_t>(std::floor(span / dt_ + 1e-9)) + 1;
}

const std::vector<double>& GesturePlayer::next() {
  const double t = records_.front().t + static_cast<double>(tick_) * dt_ + 1e-9;
  while (cursor_ + 1 < records_.size() && records_[cursor_ + 1].t <= t) ++cursor_;
  ++tick_;
  return records_[cursor_].q_glove;
}

std::size_t ReplaySummary::engaged_fingers() const {
  return static_cast<std::size_t>(std::count(ever_engaged.begin(), ever_engaged.end(), true));
}

double ReplaySummary::grasp_persistence() const {
  double best = 0.0;
  for (std::size_t f = 0; f < 3; ++f) {
    if (ever_engaged[f]) best = std::max(best, longest_contact[f]);
  }
  return best;
}

nlohmann::ordered_json ReplaySummary::to_json() const {
  nlohmann::ordered_json j;
  j["ticks"] = ticks;
  j["duration_s"] = duration;
  j["engaged_fingers"] = engaged_fingers();
  j["grasp_persistence_s"] = grasp_persistence();
  auto& fj = j["fingers"];
  fj = nlohmann::ordered_json::object();
  for (std::size_t f = 0; f < 3; ++f) {
    nlohmann::ordered_json e;
    e["engaged"] = ever_engaged[f];
    e["longest_contact_s"] = longest_contact[f];
    e["max_feedback_torque_nm"] = max_feedback_torque[f];
    auto tl = nlohmann::ordered_json::array();
    for (const auto& m : timeline[f]) tl.push_back({{"t", m.t}, {"mode", teleop::to_string(m.mode)}});
    e["timeline"] = tl;
    fj[fingers[f]] = e;
  }
  return j;
}

SummaryBuilder::SummaryBuilder(const HandModel& glove, const HandModel& hand, double dt)
    : glove_(&glove), hand_(&hand), dt_(dt) {
  for (std::size_t f = 0; f < 3; ++f) {
    summary_.fingers[f] = hand.fingers[f].name;
    summary_.timeline[f].push_back({0.0, teleop::FingerMode::Free});
  }
}

void SummaryBuilder::add(const teleop::TickReport& r) {
  auto& s = summary_;
  ++s.ticks;
  s.duration = r.timestamp;
  for (std::size_t f = 0; f < 3; ++f) {
    run_[f] = r.contact_flags[f] ? run_[f] + dt_ : 0.0;
    s.longest_contact[f] = std::max(s.longest_contact[f], run_[f]);
    if (r.modes[f] == teleop::FingerMode::Engaged) s.ever_engaged[f] = true;
    if (r.modes[f] != s.timeline[f].back().mode) s.timeline[f].push_back({r.timestamp, r.modes[f]});
    const std::size_t gf = glove_->finger_index(hand_->fingers[f].name);
    const std::size_t off = glove_->joint_offset(gf);
    for (std::size_t k = 0; k < glove_->fingers[gf].joints.size(); ++k) {
      s.max_feedback_torque[f] = std::max(s.max_feedback_torque[f], std::abs(r.feedback_torques[off + k]));
    }
  }
}

ReplaySummary run_replay(const GatewayConfig& config, const std::vector<GestureRecord>& gesture, std::ostream& report) {
  if (gesture.empty()) throw ValidationError("replay: gesture has no records");
  for (const auto& g : gesture) {
    if (g.q_glove.size() != config.glove_model.dof()) throw DimensionError("replay: gesture joint count mismatch");
  }
  auto session = make_session(config, &gesture.front().q_glove);
  GesturePlayer player(gesture, config.session.control_dt);
  SummaryBuilder summary(session->glove_model(), session->hand_model(), config.session.control_dt);
  while (!player.done()) {
    session->set_glove_target(to_radians(player.next()));
    const teleop::TickReport r = session->tick();
    report << teleop::to_json(r, false).dump() << '\n';
    summary.add(r);
  }
  return summary.summary();
}

ReplaySummary run_replay(const GatewayConfig& config, const fs::path& gesture_path, const fs::path& report_path,
                         const fs::path& summary_path) {
  const auto gesture = load_gesture(gesture_path.string(), config.glove_model.dof());
  std::ofstream report(report_path);
  if (!report) throw NotFoundError("cannot write " + report_path.string());
  const ReplaySummary s = run_replay(config, gesture, report);
  if (!report) throw Error("write failed: " + report_path.string());
  std::ofstream sum(summary_path);
  if (!sum) throw NotFoundError("cannot write " + summary_path.string());
  sum << s.to_json().dump(2) << '\n';
  return s;
}

}  // namespace gex::gateway
