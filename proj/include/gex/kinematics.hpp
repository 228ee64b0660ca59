// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gex/error.hpp"

namespace gex {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
/// Joint angles in radians, one per joint in model declaration order.
using JointVector = Eigen::VectorXd;

/// Rigid frame: p_world = rotation * p_local + translation.
struct Transform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Transform identity() { return {}; }
  static Transform from_rpy(const Vec3& translation, const Vec3& rpy);

  Transform operator*(const Transform& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }
  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

/// Fixed-axis roll/pitch/yaw: rotate about X, then Y, then Z (R = Rz * Ry * Rx).
Mat3 rpy_to_matrix(const Vec3& rpy);
/// Rotation by `angle` about a unit `axis` (Rodrigues).
Mat3 axis_angle(const Vec3& axis, double angle);

struct JointSpec {
  std::string name;
  Vec3 origin_translation = Vec3::Zero();
  Vec3 origin_rpy = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();
  double limit_lo = 0.0;  // rad
  double limit_hi = 0.0;  // rad
  int motor_id = 0;
  int zero_tick = 2048;   // encoder tick at model-zero angle
  double home = 0.0;      // rad
};

struct FingerChain {
  std::string name;
  std::vector<JointSpec> joints;
  Vec3 tip_offset = Vec3::Zero();
};

struct HandModel {
  std::string name;
  std::vector<FingerChain> fingers;
  Transform palm_frame;

  std::size_t dof() const;
  /// Throws NotFoundError for unknown names.
  std::size_t finger_index(std::string_view finger) const;
  const FingerChain& finger(std::string_view name) const { return fingers[finger_index(name)]; }
  /// Index of the finger's first joint inside a full JointVector.
  std::size_t joint_offset(std::size_t finger) const;
  Eigen::VectorXd lower_limits() const;
  Eigen::VectorXd upper_limits() const;
  JointVector home_pose() const;
  /// Flat joint list in declaration order.
  std::vector<const JointSpec*> joints() const;
};

/// Parses and validates a model document (JSON). Throws ParseError or ValidationError.
HandModel load_model(std::string_view text);
HandModel load_model_file(const std::string& path);

struct FingerFrames {
  std::vector<Transform> joints;  // world frame of each joint, after its rotation
  Vec3 tip = Vec3::Zero();
};

struct FkResult {
  std::vector<FingerFrames> fingers;
};

FkResult forward_kinematics(const HandModel& model, const JointVector& q);

Vec3 fingertip(const HandModel& model, std::string_view finger, const Eigen::VectorXd& q_finger);
Vec3 fingertip(const HandModel& model, std::size_t finger, const Eigen::VectorXd& q_finger);

/// 3 x n revolute positional Jacobian of the fingertip, in the base frame (m/rad).
Eigen::Matrix3Xd position_jacobian(const HandModel& model, std::string_view finger,
                                   const Eigen::VectorXd& q_finger);
Eigen::Matrix3Xd position_jacobian(const HandModel& model, std::size_t finger,
                                   const Eigen::VectorXd& q_finger);

struct WorkspaceSample {
  std::vector<Vec3> points;
  std::vector<Eigen::VectorXd> configs;
};

/// Fingertip positions for joint vectors drawn uniformly within limits.
/// Deterministic for a fixed seed on every platform (own bit-to-double mapping).
WorkspaceSample sample_workspace(const HandModel& model, std::string_view finger, std::size_t n,
                                 std::uint64_t seed);

JointVector clamp_to_limits(const HandModel& model, const JointVector& q);

/// Volume of the convex hull of a point cloud; 0 for degenerate (coplanar) input.
double convex_hull_volume(std::span<const Vec3> points);

}  // namespace gex
