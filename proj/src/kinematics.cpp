// SPDX-License-Identifier: Apache-2.0
#include "gex/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace gex {

using nlohmann::json;

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

Vec3 read_vec3(const json& j, std::string_view what) {
  if (!j.is_array() || j.size() != 3) {
    throw ParseError(std::string(what) + ": expected a 3-element array");
  }
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ParseError(std::string(what) + ": non-numeric element");
    v[i] = j[i].get<double>();
  }
  return v;
}

template <typename T>
T read_field(const json& j, const char* key, std::string_view ctx) {
  if (!j.contains(key)) throw ParseError(std::string(ctx) + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ParseError(std::string(ctx) + ": field '" + key + "' has the wrong type");
  }
}

void check_counts(const HandModel& m) {
  // Finger/joint layout of the two shipped devices.
  struct Layout {
    std::string_view model;
    std::size_t thumb, index, middle;
  };
  static constexpr Layout kLayouts[] = {{"gx11", 3, 4, 4}, {"ex12", 4, 4, 4}};
  for (const auto& layout : kLayouts) {
    if (m.name != layout.model) continue;
    if (m.fingers.size() != 3) {
      throw ValidationError(m.name + ": expected 3 fingers, got " + std::to_string(m.fingers.size()));
    }
    for (const auto& [finger, count] : {std::pair{"thumb", layout.thumb}, {"index", layout.index},
                                        {"middle", layout.middle}}) {
      std::size_t idx = 0;
      try {
        idx = m.finger_index(finger);
      } catch (const NotFoundError&) {
        throw ValidationError(m.name + ": missing finger '" + finger + "'");
      }
      if (m.fingers[idx].joints.size() != count) {
        throw ValidationError(m.name + ": finger '" + finger + "' must have " + std::to_string(count) +
                              " joints, got " + std::to_string(m.fingers[idx].joints.size()));
      }
    }
  }
}

}  // namespace

Mat3 rpy_to_matrix(const Vec3& rpy) {
  return (Eigen::AngleAxisd(rpy.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(rpy.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(rpy.x(), Vec3::UnitX()))
      .toRotationMatrix();
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

Transform Transform::from_rpy(const Vec3& translation, const Vec3& rpy) {
  return {rpy_to_matrix(rpy), translation};
}

std::size_t HandModel::dof() const {
  std::size_t n = 0;
  for (const auto& f : fingers) n += f.joints.size();
  return n;
}

std::size_t HandModel::finger_index(std::string_view finger) const {
  for (std::size_t i = 0; i < fingers.size(); ++i) {
    if (fingers[i].name == finger) return i;
  }
  throw NotFoundError("model '" + name + "' has no finger '" + std::string(finger) + "'");
}

std::size_t HandModel::joint_offset(std::size_t finger) const {
  std::size_t off = 0;
  for (std::size_t i = 0; i < finger; ++i) off += fingers[i].joints.size();
  return off;
}

Eigen::VectorXd HandModel::lower_limits() const {
  Eigen::VectorXd v(dof());
  std::size_t k = 0;
  for (const auto* j : joints()) v[k++] = j->limit_lo;
  return v;
}

Eigen::VectorXd HandModel::upper_limits() const {
  Eigen::VectorXd v(dof());
  std::size_t k = 0;
  for (const auto* j : joints()) v[k++] = j->limit_hi;
  return v;
}

JointVector HandModel::home_pose() const {
  JointVector v(dof());
  std::size_t k = 0;
  for (const auto* j : joints()) v[k++] = j->home;
  return v;
}

std::vector<const JointSpec*> HandModel::joints() const {
  std::vector<const JointSpec*> out;
  out.reserve(dof());
  for (const auto& f : fingers)
    for (const auto& j : f.joints) out.push_back(&j);
  return out;
}

HandModel load_model(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model document: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("model document: top level must be an object");

  HandModel m;
  m.name = read_field<std::string>(doc, "name", "model");
  if (doc.contains("palm_frame")) {
    const auto& pf = doc["palm_frame"];
    m.palm_frame = Transform::from_rpy(read_vec3(pf.at("translation"), "palm_frame.translation"),
                                       read_vec3(pf.at("rpy"), "palm_frame.rpy"));
  }
  if (!doc.contains("fingers") || !doc["fingers"].is_array() || doc["fingers"].empty()) {
    throw ParseError("model document: 'fingers' must be a non-empty array");
  }

  std::set<int> motor_ids;
  std::set<std::string> finger_names;
  for (const auto& jf : doc["fingers"]) {
    FingerChain chain;
    chain.name = read_field<std::string>(jf, "name", "finger");
    const std::string ctx = "finger '" + chain.name + "'";
    if (chain.name != "thumb" && chain.name != "index" && chain.name != "middle") {
      throw ValidationError(ctx + ": name must be thumb, index or middle");
    }
    if (!finger_names.insert(chain.name).second) throw ValidationError(ctx + ": duplicate finger");
    chain.tip_offset = read_vec3(jf.at("tip_offset"), ctx + ".tip_offset");
    if (!jf.contains("joints") || !jf["joints"].is_array() || jf["joints"].empty()) {
      throw ParseError(ctx + ": 'joints' must be a non-empty array");
    }
    for (const auto& jj : jf["joints"]) {
      JointSpec js;
      js.name = read_field<std::string>(jj, "name", ctx + " joint");
      const std::string jctx = "joint '" + js.name + "'";
      js.origin_translation = read_vec3(jj.at("origin_translation"), jctx + ".origin_translation");
      js.origin_rpy = read_vec3(jj.at("origin_rpy"), jctx + ".origin_rpy");
      js.axis = read_vec3(jj.at("axis"), jctx + ".axis");
      js.limit_lo = read_field<double>(jj, "limit_lo_deg", jctx) * kDegToRad;
      js.limit_hi = read_field<double>(jj, "limit_hi_deg", jctx) * kDegToRad;
      js.motor_id = read_field<int>(jj, "motor_id", jctx);
      if (jj.contains("zero_tick")) js.zero_tick = read_field<int>(jj, "zero_tick", jctx);
      js.home = jj.contains("home_deg") ? read_field<double>(jj, "home_deg", jctx) * kDegToRad
                                        : std::clamp(0.0, js.limit_lo, js.limit_hi);

      if (std::abs(js.axis.norm() - 1.0) > 1e-9) throw ValidationError(jctx + ": axis is not unit length");
      if (js.limit_lo > js.limit_hi) throw ValidationError(jctx + ": limit_lo exceeds limit_hi");
      if (js.home < js.limit_lo || js.home > js.limit_hi) throw ValidationError(jctx + ": home outside limits");
      if (js.motor_id < 0 || js.motor_id > 253) throw ValidationError(jctx + ": motor_id must be 0-253");
      if (js.zero_tick < 0 || js.zero_tick > 4095) throw ValidationError(jctx + ": zero_tick must be 0-4095");
      if (!motor_ids.insert(js.motor_id).second) {
        throw ValidationError(jctx + ": duplicate motor_id " + std::to_string(js.motor_id));
      }
      chain.joints.push_back(std::move(js));
    }
    m.fingers.push_back(std::move(chain));
  }
  check_counts(m);
  return m;
}

HandModel load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open model file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_model(ss.str());
}

namespace {

void check_finger_dim(const FingerChain& f, const Eigen::VectorXd& q) {
  if (static_cast<std::size_t>(q.size()) != f.joints.size()) {
    throw DimensionError("finger '" + f.name + "' expects " + std::to_string(f.joints.size()) +
                         " joint values, got " + std::to_string(q.size()));
  }
}

FingerFrames chain_frames(const Transform& palm, const FingerChain& f, const Eigen::VectorXd& q) {
  FingerFrames out;
  out.joints.reserve(f.joints.size());
  Transform frame = palm;
  for (std::size_t i = 0; i < f.joints.size(); ++i) {
    const auto& j = f.joints[i];
    frame = frame * Transform::from_rpy(j.origin_translation, j.origin_rpy);
    frame.rotation = frame.rotation * axis_angle(j.axis, q[static_cast<Eigen::Index>(i)]);
    out.joints.push_back(frame);
  }
  out.tip = frame.apply(f.tip_offset);
  return out;
}

}  // namespace

FkResult forward_kinematics(const HandModel& model, const JointVector& q) {
  if (static_cast<std::size_t>(q.size()) != model.dof()) {
    throw DimensionError("model '" + model.name + "' expects " + std::to_string(model.dof()) +
                         " joint values, got " + std::to_string(q.size()));
  }
  FkResult out;
  std::size_t off = 0;
  for (const auto& f : model.fingers) {
    const auto n = static_cast<Eigen::Index>(f.joints.size());
    out.fingers.push_back(chain_frames(model.palm_frame, f, q.segment(static_cast<Eigen::Index>(off), n)));
    off += f.joints.size();
  }
  return out;
}

Vec3 fingertip(const HandModel& model, std::size_t finger, const Eigen::VectorXd& q_finger) {
  const auto& f = model.fingers.at(finger);
  check_finger_dim(f, q_finger);
  return chain_frames(model.palm_frame, f, q_finger).tip;
}

Vec3 fingertip(const HandModel& model, std::string_view finger, const Eigen::VectorXd& q_finger) {
  return fingertip(model, model.finger_index(finger), q_finger);
}

Eigen::Matrix3Xd position_jacobian(const HandModel& model, std::size_t finger,
                                   const Eigen::VectorXd& q_finger) {
  const auto& f = model.fingers.at(finger);
  check_finger_dim(f, q_finger);
  const FingerFrames frames = chain_frames(model.palm_frame, f, q_finger);
  Eigen::Matrix3Xd jac(3, static_cast<Eigen::Index>(f.joints.size()));
  for (std::size_t i = 0; i < f.joints.size(); ++i) {
    const Vec3 z = frames.joints[i].rotation * f.joints[i].axis;
    jac.col(static_cast<Eigen::Index>(i)) = z.cross(frames.tip - frames.joints[i].translation);
  }
  return jac;
}

Eigen::Matrix3Xd position_jacobian(const HandModel& model, std::string_view finger,
                                   const Eigen::VectorXd& q_finger) {
  return position_jacobian(model, model.finger_index(finger), q_finger);
}

WorkspaceSample sample_workspace(const HandModel& model, std::string_view finger, std::size_t n,
                                 std::uint64_t seed) {
  const std::size_t fi = model.finger_index(finger);
  const auto& f = model.fingers[fi];
  std::mt19937_64 rng(seed);
  WorkspaceSample out;
  out.points.reserve(n);
  out.configs.reserve(n);
  Eigen::VectorXd q(static_cast<Eigen::Index>(f.joints.size()));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < f.joints.size(); ++i) {
      // 53 random bits -> [0, 1); std::uniform_real_distribution is not portable bit-for-bit.
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      const auto& j = f.joints[i];
      q[static_cast<Eigen::Index>(i)] = j.limit_lo + u * (j.limit_hi - j.limit_lo);
    }
    out.points.push_back(fingertip(model, fi, q));
    out.configs.push_back(q);
  }
  return out;
}

JointVector clamp_to_limits(const HandModel& model, const JointVector& q) {
  if (static_cast<std::size_t>(q.size()) != model.dof()) {
    throw DimensionError("clamp_to_limits: expected " + std::to_string(model.dof()) + " values");
  }
  return q.cwiseMax(model.lower_limits()).cwiseMin(model.upper_limits());
}

}  // namespace gex
