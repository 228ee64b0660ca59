// SPDX-License-Identifier: Apache-2.0
// Line-delimited gesture and trajectory files.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "gex/kinematics.hpp"

namespace gex {

/// One glove sample: seconds since start, joint angles in degrees.
struct GestureRecord {
  double t = 0.0;
  std::vector<double> q_glove;
};

/// Parses `{"t":..,"q_glove":[..]}` lines. Blank lines are skipped; errors name the line number.
/// `dof` > 0 enforces the joint count; t must be strictly increasing.
std::vector<GestureRecord> read_gesture(std::istream& in, std::size_t dof = 0);
std::vector<GestureRecord> load_gesture(const std::string& path, std::size_t dof = 0);

std::string gesture_line(const GestureRecord& r);
void write_gesture(std::ostream& out, const std::vector<GestureRecord>& records);

/// Degrees to a radian joint vector.
JointVector to_radians(const std::vector<double>& deg);
std::vector<double> to_degrees(const JointVector& q);

/// `{"t":..,"q_hand":[..]}` line.
std::string trajectory_line(double t, const std::vector<double>& q_hand_deg);

}  // namespace gex
