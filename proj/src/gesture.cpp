// SPDX-License-Identifier: Apache-2.0
#include "gex/gesture.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

namespace gex {

std::vector<GestureRecord> read_gesture(std::istream& in, std::size_t dof) {
  std::vector<GestureRecord> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "gesture line " + std::to_string(lineno) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw ParseError(where + "not valid JSON");
    }
    if (!j.is_object() || !j.contains("t") || !j["t"].is_number() || !j.contains("q_glove") || !j["q_glove"].is_array()) {
      throw ParseError(where + "expected {\"t\": number, \"q_glove\": [numbers]}");
    }
    GestureRecord r;
    r.t = j["t"].get<double>();
    for (const auto& v : j["q_glove"]) {
      if (!v.is_number()) throw ParseError(where + "q_glove entries must be numbers");
      r.q_glove.push_back(v.get<double>());
    }
    if (!std::isfinite(r.t)) throw ValidationError(where + "t must be finite");
    for (double v : r.q_glove) {
      if (!std::isfinite(v)) throw ValidationError(where + "q_glove entries must be finite");
    }
    if (dof && r.q_glove.size() != dof) {
      throw DimensionError(where + "expected " + std::to_string(dof) + " joint values, got " +
                           std::to_string(r.q_glove.size()));
    }
    if (!out.empty() && !(r.t > out.back().t)) throw ValidationError(where + "t must be strictly increasing");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<GestureRecord> load_gesture(const std::string& path, std::size_t dof) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open gesture file: " + path);
  return read_gesture(in, dof);
}

std::string gesture_line(const GestureRecord& r) {
  nlohmann::ordered_json j;
  j["t"] = r.t;
  j["q_glove"] = r.q_glove;
  return j.dump();
}

void write_gesture(std::ostream& out, const std::vector<GestureRecord>& records) {
  for (const auto& r : records) out << gesture_line(r) << '\n';
}

JointVector to_radians(const std::vector<double>& deg) {
  JointVector q(static_cast<Eigen::Index>(deg.size()));
  for (std::size_t i = 0; i < deg.size(); ++i) q[static_cast<Eigen::Index>(i)] = deg[i] * std::numbers::pi / 180.0;
  return q;
}

std::vector<double> to_degrees(const JointVector& q) {
  std::vector<double> out(static_cast<std::size_t>(q.size()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = q[static_cast<Eigen::Index>(i)] * 180.0 / std::numbers::pi;
  return out;
}

std::string trajectory_line(double t, const std::vector<double>& q_hand_deg) {
  nlohmann::ordered_json j;
  j["t"] = t;
  j["q_hand"] = q_hand_deg;
  return j.dump();
}

}  // namespace gex
