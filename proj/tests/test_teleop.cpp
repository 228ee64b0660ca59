// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>
#include <set>

#include "gex/gesture.hpp"
#include "gex/teleop.hpp"
#include "oracles.hpp"

namespace gex::teleop {
namespace {

namespace reg = bus::reg;

std::string data(const std::string& rel) { return std::string(GEX_DATA_DIR) + "/" + rel; }
HandModel gx11() { return load_model_file(data("models/gx11.json")); }
HandModel ex12() { return load_model_file(data("models/ex12.json")); }

SceneObject cup_at(const Vec3& c) {
  SceneObject o;
  o.center = c;
  return o;
}

std::vector<TickReport> run_gesture(Session& s, const std::vector<GestureRecord>& g) {
  std::vector<TickReport> out;
  for (const auto& rec : g) {
    s.set_glove_target(to_radians(rec.q_glove));
    out.push_back(s.tick());
  }
  return out;
}

std::unique_ptr<Session> make_session(const std::string& scene_file, const std::vector<GestureRecord>& g) {
  return std::make_unique<Session>(ex12(), gx11(), bus::ServoProfile::m077(), bus::ServoProfile::m288(),
                                   load_scene_file(data(scene_file)), SessionConfig{}, to_radians(g.front().q_glove));
}

// ---- contact geometry ----

TEST(Contact, FarTipHasNoForce) {
  Scene s;
  s.object = cup_at(Vec3::Zero());
  const auto c = contact_forces(s, {Vec3(0.2, 0, 0)});
  EXPECT_FALSE(c[0].in_contact);
  EXPECT_EQ(c[0].force, Vec3::Zero());
}

TEST(Contact, SurfaceTouchIsNotContact) {
  Scene s;
  s.object = cup_at(Vec3::Zero());
  const auto c = contact_forces(s, {Vec3(0.035 + 0.008, 0, 0)});
  EXPECT_FALSE(c[0].in_contact);
  EXPECT_EQ(c[0].force.norm(), 0.0);
}

TEST(Contact, TwoMillimetresInsideGivesOneNewton) {
  Scene s;
  s.object = cup_at(Vec3(0.01, -0.02, 0.05));
  const Vec3 dir = Vec3(0.6, 0.8, 0.0);
  const Vec3 tip = s.object->center + (0.035 + 0.008 - 0.002) * dir + Vec3(0, 0, 0.01);
  const auto c = contact_forces(s, {tip});
  ASSERT_TRUE(c[0].in_contact);
  EXPECT_NEAR(c[0].force.norm(), 1.0, 1e-9);
  EXPECT_NEAR((c[0].force.normalized() - dir).norm(), 0.0, 1e-9);
}

TEST(Contact, CapAndEdgeNormals) {
  SceneObject o = cup_at(Vec3::Zero());
  auto [d_top, n_top] = cylinder_distance(o, Vec3(0.01, 0.0, 0.05 + 0.003));
  EXPECT_NEAR(d_top, 0.003, 1e-12);
  EXPECT_NEAR((n_top - Vec3(0, 0, 1)).norm(), 0.0, 1e-12);
  auto [d_in, n_in] = cylinder_distance(o, Vec3(0.0, 0.0, -0.048));
  EXPECT_NEAR(d_in, -0.002, 1e-12);
  EXPECT_NEAR((n_in - Vec3(0, 0, -1)).norm(), 0.0, 1e-12);
  auto [d_edge, n_edge] = cylinder_distance(o, Vec3(0.035 + 0.003, 0.0, 0.05 + 0.004));
  EXPECT_NEAR(d_edge, 0.005, 1e-12);
  EXPECT_NEAR((n_edge - Vec3(0.6, 0, 0.8)).norm(), 0.0, 1e-12);
}

TEST(Contact, EmptySceneNeverTouches) {
  Scene s;
  const auto c = contact_forces(s, {Vec3::Zero(), Vec3(1, 1, 1)});
  EXPECT_FALSE(c[0].in_contact || c[1].in_contact);
}

TEST(Scene, DocumentsLoadAndValidate) {
  const Scene cup = load_scene_file(data("scenes/cup.json"));
  ASSERT_TRUE(cup.object);
  EXPECT_DOUBLE_EQ(cup.object->radius, 0.035);
  EXPECT_DOUBLE_EQ(cup.object->height, 0.1);
  EXPECT_DOUBLE_EQ(cup.object->stiffness, 500.0);
  EXPECT_DOUBLE_EQ(cup.tip_radius, 0.008);
  EXPECT_FALSE(load_scene_file(data("scenes/empty.json")).object);
  EXPECT_EQ(load_scene(scene_to_json(cup).dump()).object->center, cup.object->center);
  EXPECT_THROW(load_scene("{"), ParseError);
  EXPECT_THROW(load_scene(R"({"object":{"center":[0,0]}})"), ParseError);
  EXPECT_THROW(load_scene(R"({"object":{"center":[0,0,0],"radius":-1}})"), ValidationError);
  EXPECT_THROW(load_scene(R"({"object":{"shape":"box","center":[0,0,0]}})"), ValidationError);
}

// ---- simulated current sensing ----

TEST(Current, ZeroForceZeroCurrent) {
  const HandModel m = gx11();
  const auto ma = simulated_present_current(m, 1, Eigen::VectorXd::Constant(4, 0.3), Vec3::Zero(), 1.0);
  EXPECT_EQ(ma.norm(), 0.0);
}

TEST(Current, ForceInJacobianLeftNullSpaceGivesZero) {
  const HandModel m = gx11();
  const Eigen::VectorXd q = Eigen::VectorXd::Zero(4);  // straight finger: all columns orthogonal to its axis
  const Eigen::Matrix3Xd J = oracle::chain_jacobian(m, 1, q);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(J, Eigen::ComputeFullU);
  ASSERT_LT(svd.singularValues()[2], 1e-12);
  const Vec3 n = svd.matrixU().col(2);
  const auto ma = simulated_present_current(m, 1, q, 3.0 * n, 1.0);
  EXPECT_LT(ma.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Current, MatchesDirectMatrixOracleOnPinch) {
  const HandModel m = gx11();
  const auto g = load_gesture(data("gestures/pinch.jsonl"), 12);
  // Hand pose from offline retargeting of the held pinch.
  const JointVector qh = retarget_trajectory(ex12(), m, {to_radians(g.back().q_glove)}, RetargetConfig::defaults())[0];
  const Scene cup = load_scene_file(data("scenes/cup.json"));
  const auto tips = oracle::all_tips(m, qh);
  const auto contacts = contact_forces(cup, tips);
  std::size_t checked = 0;
  for (std::size_t f = 0; f < 3; ++f) {
    const auto off = static_cast<Eigen::Index>(m.joint_offset(f));
    const auto n = static_cast<Eigen::Index>(m.fingers[f].joints.size());
    const Eigen::VectorXd qf = qh.segment(off, n);
    const double kt = bus::ServoProfile::m288().torque_constant;
    const Eigen::VectorXd got = simulated_present_current(m, f, qf, contacts[f].force, kt);
    const Eigen::VectorXd want = oracle::chain_jacobian(m, f, qf).transpose() * contacts[f].force / kt * 1e3;
    EXPECT_LE((got - want).cwiseAbs().maxCoeff(), 1e-9) << m.fingers[f].name;
    if (contacts[f].in_contact) ++checked;
  }
  EXPECT_GE(checked, 2u);
}

// ---- detector ----

std::vector<FingerMode> run_detector(const std::vector<double>& trace) {
  DetectorParams p;
  DetectorState st;
  std::vector<FingerMode> out;
  for (double c : trace) {
    const std::array<double, 1> v{c};
    out.push_back(update_mode(p, st, v));
  }
  return out;
}

TEST(Detector, BelowThresholdsStaysFree) {
  for (auto m : run_detector({0, 10, 59.9, 45, 30, 59, 0})) EXPECT_EQ(m, FingerMode::Free);
}

TEST(Detector, EngagesOnThirdConsecutiveCycle) {
  const auto m = run_detector({10, 60, 61, 80, 80, 20});
  EXPECT_EQ(m[1], FingerMode::Free);
  EXPECT_EQ(m[2], FingerMode::Free);
  EXPECT_EQ(m[3], FingerMode::Engaged);
  EXPECT_EQ(m[5], FingerMode::Engaged);
}

TEST(Detector, InterruptedStreakRestarts) {
  const auto m = run_detector({70, 70, 50, 70, 70, 40, 70, 70, 70});
  for (std::size_t i = 0; i + 1 < m.size(); ++i) EXPECT_EQ(m[i], FingerMode::Free) << i;
  EXPECT_EQ(m.back(), FingerMode::Engaged);
}

TEST(Detector, HysteresisPreventsChatter) {
  std::vector<double> trace{80, 80, 80};
  for (int i = 0; i < 50; ++i) trace.push_back(i % 2 ? 59.0 : 31.0);  // between thresholds
  trace.insert(trace.end(), {70, 25, 70, 25, 62, 35});
  const auto m = run_detector(trace);
  int changes = 0;
  for (std::size_t i = 1; i < m.size(); ++i) changes += m[i] != m[i - 1];
  EXPECT_EQ(changes, 1);
  EXPECT_EQ(m.back(), FingerMode::Engaged);
}

TEST(Detector, ReleasesAfterDebouncedQuiet) {
  const auto m = run_detector({90, 90, 90, 30, 29, 31, 10, 5, 0, 0});
  EXPECT_EQ(m[2], FingerMode::Engaged);
  EXPECT_EQ(m[7], FingerMode::Engaged);
  EXPECT_EQ(m[8], FingerMode::Free);
}

TEST(Detector, MatchesReferenceFsmOnRandomTraces) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0.0, 120.0);
  for (int t = 0; t < 200; ++t) {
    DetectorParams p;
    DetectorState st;
    oracle::ReferenceFsm ref;
    for (int k = 0; k < 300; ++k) {
      // Mix of smooth drifts and noise so every branch is visited.
      const double c = (k / 40) % 2 ? u(rng) : u(rng) * 0.5;
      const std::array<double, 3> v{c * 0.3, -c, c * 0.5};
      ASSERT_EQ(update_mode(p, st, v) == FingerMode::Engaged, ref.step(c)) << "trace " << t << " cycle " << k;
    }
  }
}

TEST(Detector, ParamsValidate) {
  EXPECT_THROW((DetectorParams{30, 30, 3}.validate()), ValidationError);
  EXPECT_THROW((DetectorParams{60, 30, 0}.validate()), ValidationError);
}

// ---- impedance ----

TEST(Impedance, EquilibriumIsZero) {
  const Eigen::VectorXd q = Eigen::VectorXd::Constant(4, 0.7);
  EXPECT_EQ(impedance_torque({}, q, q, Eigen::VectorXd::Zero(4)).norm(), 0.0);
}

TEST(Impedance, ClampsAtCap) {
  ImpedanceParams p;
  const Eigen::VectorXd qc = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd q(3);
  q << 1.0, -1.0, 0.1;
  const auto tau = impedance_torque(p, qc, q, Eigen::VectorXd::Zero(3));
  EXPECT_DOUBLE_EQ(tau[0], -p.torque_cap);
  EXPECT_DOUBLE_EQ(tau[1], p.torque_cap);
  EXPECT_NEAR(tau[2], -0.03, 1e-15);
}

TEST(Impedance, SpringIsGradientOfPotential) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  ImpedanceParams p{0.3, 0.0, 0.2};
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd qc(4), q(4);
    for (int i = 0; i < 4; ++i) {
      qc[i] = u(rng);
      q[i] = qc[i] + u(rng);
    }
    auto potential = [&](const Eigen::VectorXd& x) {
      Eigen::VectorXd v(1);
      v[0] = 0.5 * p.kp * (x - qc).squaredNorm();
      return v;
    };
    const Eigen::MatrixXd grad = oracle::finite_difference(potential, q, 1e-6);
    const auto tau = impedance_torque(p, qc, q, Eigen::VectorXd::Zero(4));
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(tau[i], -grad(0, i), 1e-9);
  }
}

TEST(Impedance, CapMustNotExceedGloveRating) {
  EXPECT_THROW((ImpedanceParams{0.3, 0.003, 0.3}.validate(0.215)), ValidationError);
  EXPECT_NO_THROW((ImpedanceParams{}.validate(0.215)));
}

// ---- session ----

TEST(Session, EmptySceneStaticGloveStaysFree) {
  const auto g = load_gesture(data("gestures/pinch.jsonl"), 12);
  auto s = make_session("scenes/empty.json", g);
  const JointVector target = to_radians(g.back().q_glove);
  s->set_glove_target(target);
  TickReport last;
  for (int k = 0; k < 150; ++k) {
    s->glove_wire().clear();
    last = s->tick();
    for (int f = 0; f < 3; ++f) {
      EXPECT_EQ(last.modes[f], FingerMode::Free);
      EXPECT_FALSE(last.contact_flags[f]);
    }
    for (double t : last.feedback_torques) EXPECT_EQ(t, 0.0);
    for (const auto& p : s->glove_wire().written_packets()) EXPECT_EQ(p.instruction, dxl::Instruction::SyncRead);
  }
  // Hand settles on the goal positions it was commanded.
  const auto hand_joints = s->hand_model().joints();
  for (std::size_t i = 0; i < hand_joints.size(); ++i) {
    const auto goal = s->hand_bus().servo(hand_joints[i]->motor_id).register_value(reg::kGoalPosition);
    EXPECT_NEAR(last.q_hand[i], sdk::ticks_to_deg(goal, hand_joints[i]->zero_tick), 0.1) << i;
  }
  EXPECT_EQ(last.q_glove.size(), 12u);
  EXPECT_EQ(last.q_hand.size(), 11u);
  EXPECT_EQ(last.feedback_torques.size(), 12u);
}

TEST(Session, PinchOnCupEngagesAndHolds) {
  const auto g = load_gesture(data("gestures/pinch.jsonl"), 12);
  auto s = make_session("scenes/cup.json", g);
  const auto glove_joints = s->glove_model().joints();
  std::array<int, 3> longest{}, run{};
  std::set<std::size_t> engaged_ever;
  for (const auto& rec : g) {
    s->set_glove_target(to_radians(rec.q_glove));
    s->glove_wire().clear();
    const TickReport r = s->tick();
    for (std::size_t f = 0; f < 3; ++f) {
      run[f] = r.contact_flags[f] ? run[f] + 1 : 0;
      longest[f] = std::max(longest[f], run[f]);
      if (r.modes[f] == FingerMode::Engaged) engaged_ever.insert(f);
    }
    // Free silence on the wire, and bounded torques.
    std::set<int> current_ids;
    for (const auto& p : s->glove_wire().written_packets()) {
      if (p.instruction != dxl::Instruction::SyncWrite) continue;
      const auto req = dxl::parse_sync_write(p.params);
      if (req.address == reg::kGoalCurrent ||
          (req.address == reg::kOperatingMode && !req.entries.empty() && req.entries[0].data[0] == 0)) {
        for (const auto& e : req.entries) current_ids.insert(e.id);
      }
    }
    const auto& gm = s->glove_model();
    for (std::size_t f = 0; f < 3; ++f) {
      const std::size_t gf = gm.finger_index(s->hand_model().fingers[f].name);
      const std::size_t off = gm.joint_offset(gf);
      for (std::size_t k = 0; k < gm.fingers[gf].joints.size(); ++k) {
        const double tau = r.feedback_torques[off + k];
        EXPECT_LE(std::abs(tau), s->config().impedance.torque_cap);
        if (r.modes[f] == FingerMode::Free) {
          EXPECT_EQ(tau, 0.0);
          EXPECT_EQ(current_ids.count(glove_joints[off + k]->motor_id), 0u);
        }
      }
    }
  }
  EXPECT_GE(engaged_ever.size(), 2u);
  // Thumb and index keep contact for at least one second at 100 Hz.
  EXPECT_GE(longest[0], 100);
  EXPECT_GE(longest[1], 100);
}

TEST(Session, EngagedFingersFeelFeedback) {
  const auto g = load_gesture(data("gestures/pinch.jsonl"), 12);
  auto s = make_session("scenes/cup.json", g);
  const auto reports = run_gesture(*s, g);
  const auto& last = reports.back();
  const auto& gm = s->glove_model();
  for (std::size_t f = 0; f < 3; ++f) {
    if (last.modes[f] != FingerMode::Engaged) continue;
    const std::size_t gf = gm.finger_index(s->hand_model().fingers[f].name);
    double mag = 0.0;
    for (std::size_t k = 0; k < gm.fingers[gf].joints.size(); ++k) mag += std::abs(last.feedback_torques[gm.joint_offset(gf) + k]);
    EXPECT_GT(mag, 0.0) << s->hand_model().fingers[f].name;
  }
}

TEST(Session, ModesMatchReferenceFsmOnSensedCurrents) {
  const auto g = load_gesture(data("gestures/pinch.jsonl"), 12);
  auto s = make_session("scenes/cup.json", g);
  const auto reports = run_gesture(*s, g);
  std::array<oracle::ReferenceFsm, 3> ref{};
  const HandModel& hm = s->hand_model();
  for (const auto& r : reports) {
    for (std::size_t f = 0; f < 3; ++f) {
      double peak = 0.0;
      for (std::size_t k = 0; k < hm.fingers[f].joints.size(); ++k) {
        peak = std::max(peak, std::abs(r.hand_currents[hm.joint_offset(f) + k]));
      }
      EXPECT_EQ(r.modes[f] == FingerMode::Engaged, ref[f].step(peak));
    }
  }
}

TEST(Session, RunsAreByteDeterministic) {
  const auto g = load_gesture(data("gestures/pinch.jsonl"), 12);
  std::string a, b;
  for (std::string* out : {&a, &b}) {
    auto s = make_session("scenes/cup.json", g);
    for (const auto& r : run_gesture(*s, g)) *out += to_json(r).dump() + "\n";
  }
  EXPECT_EQ(a, b);
  EXPECT_GT(a.size(), 1000u);
}

TEST(Session, RepeatedTickWithoutSteppingIsIdentical) {
  const auto g = load_gesture(data("gestures/pinch.jsonl"), 12);
  auto s = make_session("scenes/cup.json", g);
  for (std::size_t k = 0; k < 150; ++k) {
    s->set_glove_target(to_radians(g[k].q_glove));
    s->tick();
  }
  // Settle the retarget state on the frozen glove reading first.
  for (int k = 0; k < 100; ++k) s->tick(false);
  auto a = to_json(s->tick(false));
  auto b = to_json(s->tick(false));
  a.erase("t");
  b.erase("t");
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(Session, RejectsBadInput) {
  const auto g = load_gesture(data("gestures/pinch.jsonl"), 12);
  auto s = make_session("scenes/empty.json", g);
  EXPECT_THROW(s->set_glove_target(JointVector::Zero(11)), DimensionError);
  JointVector bad = JointVector::Zero(12);
  bad[3] = std::nan("");
  EXPECT_THROW(s->set_glove_target(bad), ValidationError);
  SessionConfig cfg;
  cfg.impedance.torque_cap = 1.0;
  EXPECT_THROW(Session(ex12(), gx11(), bus::ServoProfile::m077(), bus::ServoProfile::m288(), Scene{}, cfg),
               ValidationError);
}

TEST(Session, ReportJsonShape) {
  const auto g = load_gesture(data("gestures/pinch.jsonl"), 12);
  auto s = make_session("scenes/cup.json", g);
  const auto j = to_json(s->tick());
  for (const char* k : {"t", "q_glove", "q_hand", "tips_glove", "tips_hand", "modes", "contact_flags",
                        "feedback_torques", "frames_glove", "frames_hand"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_EQ(j["frames_hand"].size(), 3u);
  EXPECT_EQ(j["frames_hand"][1].size(), 5u);  // four joints and the tip
  EXPECT_EQ(j["frames_glove"][0].size(), 5u);
  EXPECT_EQ(j["modes"][0], "Free");
}

}  // namespace
}  // namespace gex::teleop
