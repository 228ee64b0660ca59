// SPDX-License-Identifier: Apache-2.0
#include "gex/retarget.hpp"

#include <Eigen/Cholesky>

#include <cmath>

namespace gex {

RetargetConfig RetargetConfig::defaults() {
  RetargetConfig c;
  c.specs = {
      {KeyVectorKind::PalmToTip, "palm", "thumb", 1.0},
      {KeyVectorKind::PalmToTip, "palm", "index", 1.0},
      {KeyVectorKind::PalmToTip, "palm", "middle", 1.0},
      {KeyVectorKind::TipToTip, "thumb", "index", 2.0},
      {KeyVectorKind::TipToTip, "thumb", "middle", 2.0},
      {KeyVectorKind::TipToTip, "index", "middle", 2.0},
  };
  return c;
}

void RetargetConfig::validate() const {
  if (!(alpha > 0.0)) throw ValidationError("retarget: alpha must be > 0");
  if (!(beta >= 0.0)) throw ValidationError("retarget: beta must be >= 0");
  if (max_iters < 1) throw ValidationError("retarget: max_iters must be >= 1");
  if (!(grad_tol >= 0.0)) throw ValidationError("retarget: grad_tol must be >= 0");
  if (!(shrink > 0.0 && shrink < 1.0)) throw ValidationError("retarget: shrink must be in (0, 1)");
  if (specs.empty()) throw ValidationError("retarget: at least one key vector is required");
  for (const auto& s : specs) {
    if (!(s.weight >= 0.0)) throw ValidationError("retarget: key vector weight must be >= 0");
    if (s.kind == KeyVectorKind::PalmToTip && s.from != "palm") {
      throw ValidationError("retarget: palm-to-tip vectors must start at 'palm'");
    }
    if (s.kind == KeyVectorKind::TipToTip && s.from == "palm") {
      throw ValidationError("retarget: tip-to-tip vectors need a finger as origin");
    }
  }
}

namespace {

struct Linearization {
  std::vector<Vec3> tips;
  std::vector<Eigen::Matrix3Xd> jacobians;
};

Linearization linearize(const HandModel& model, const JointVector& q, bool with_jacobians) {
  if (static_cast<std::size_t>(q.size()) != model.dof()) {
    throw DimensionError("model '" + model.name + "' expects " + std::to_string(model.dof()) +
                         " joint values, got " + std::to_string(q.size()));
  }
  Linearization lin;
  for (std::size_t f = 0; f < model.fingers.size(); ++f) {
    const auto off = static_cast<Eigen::Index>(model.joint_offset(f));
    const auto n = static_cast<Eigen::Index>(model.fingers[f].joints.size());
    const Eigen::VectorXd qf = q.segment(off, n);
    lin.tips.push_back(fingertip(model, f, qf));
    if (with_jacobians) lin.jacobians.push_back(position_jacobian(model, f, qf));
  }
  return lin;
}

struct Endpoints {
  int from = -1;  // -1 = palm
  int to = -1;
};

Endpoints resolve(const HandModel& model, const KeyVectorSpec& s) {
  Endpoints e;
  e.to = static_cast<int>(model.finger_index(s.to));
  if (s.kind == KeyVectorKind::TipToTip) e.from = static_cast<int>(model.finger_index(s.from));
  return e;
}

struct Evaluation {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd gauss_newton;  // sum 2 w J^T J + 2 beta I
};

Evaluation evaluate(const HandModel& hand, const JointVector& q, const std::vector<Vec3>& targets,
                    const RetargetConfig& config, const JointVector& q_prev, double beta, bool hessian) {
  if (targets.size() != config.specs.size()) {
    throw DimensionError("retarget: " + std::to_string(config.specs.size()) + " key vectors configured, " +
                         std::to_string(targets.size()) + " targets given");
  }
  if (q_prev.size() != q.size()) throw DimensionError("retarget: q_prev dimension mismatch");
  const Linearization lin = linearize(hand, q, true);
  const auto dof = static_cast<Eigen::Index>(hand.dof());

  Evaluation ev;
  ev.gradient = Eigen::VectorXd::Zero(dof);
  if (hessian) ev.gauss_newton = Eigen::MatrixXd::Zero(dof, dof);

  Eigen::MatrixXd jk(3, dof);
  for (std::size_t k = 0; k < config.specs.size(); ++k) {
    const auto& spec = config.specs[k];
    const Endpoints ep = resolve(hand, spec);
    jk.setZero();
    Vec3 v = lin.tips[static_cast<std::size_t>(ep.to)] - hand.palm_frame.translation;
    const auto to_off = static_cast<Eigen::Index>(hand.joint_offset(static_cast<std::size_t>(ep.to)));
    const auto& jto = lin.jacobians[static_cast<std::size_t>(ep.to)];
    jk.middleCols(to_off, jto.cols()) += jto;
    if (ep.from >= 0) {
      v = lin.tips[static_cast<std::size_t>(ep.to)] - lin.tips[static_cast<std::size_t>(ep.from)];
      const auto from_off = static_cast<Eigen::Index>(hand.joint_offset(static_cast<std::size_t>(ep.from)));
      const auto& jfrom = lin.jacobians[static_cast<std::size_t>(ep.from)];
      jk.middleCols(from_off, jfrom.cols()) -= jfrom;
    }
    const Vec3 r = v - config.alpha * targets[k];
    ev.value += spec.weight * r.squaredNorm();
    ev.gradient.noalias() += 2.0 * spec.weight * jk.transpose() * r;
    if (hessian) ev.gauss_newton.noalias() += 2.0 * spec.weight * jk.transpose() * jk;
  }
  const Eigen::VectorXd dq = q - q_prev;
  ev.value += beta * dq.squaredNorm();
  ev.gradient += 2.0 * beta * dq;
  if (hessian) ev.gauss_newton.diagonal().array() += 2.0 * beta;
  return ev;
}

Eigen::VectorXd projected_gradient(const Eigen::VectorXd& g, const Eigen::VectorXd& q,
                                   const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  Eigen::VectorXd pg = g;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if ((q[i] <= lo[i] && g[i] > 0.0) || (q[i] >= hi[i] && g[i] < 0.0)) pg[i] = 0.0;
  }
  return pg;
}

}  // namespace

std::vector<Vec3> keyvectors(const HandModel& model, const JointVector& q,
                             const std::vector<KeyVectorSpec>& specs) {
  const Linearization lin = linearize(model, q, false);
  std::vector<Vec3> out;
  out.reserve(specs.size());
  for (const auto& s : specs) {
    const Endpoints ep = resolve(model, s);
    const Vec3 origin = ep.from < 0 ? model.palm_frame.translation : lin.tips[static_cast<std::size_t>(ep.from)];
    out.push_back(lin.tips[static_cast<std::size_t>(ep.to)] - origin);
  }
  return out;
}

ObjectiveValue objective_and_gradient(const HandModel& hand, const JointVector& q,
                                      const std::vector<Vec3>& targets, const RetargetConfig& config,
                                      const JointVector& q_prev, double beta) {
  Evaluation ev = evaluate(hand, q, targets, config, q_prev, beta, false);
  return {ev.value, std::move(ev.gradient)};
}

JointVector solve_frame(const HandModel& hand, const std::vector<Vec3>& targets, RetargetState& state,
                        const RetargetConfig& config, SolveStats* stats) {
  const Eigen::VectorXd lo = hand.lower_limits();
  const Eigen::VectorXd hi = hand.upper_limits();
  for (const auto& t : targets) {
    if (!t.allFinite()) throw RetargetError("retarget: non-finite target vector");
  }

  // No previous output on the first frame: start mid-range and fit the targets alone.
  const bool first = !state.initialized;
  JointVector q = first ? JointVector(0.5 * (lo + hi)) : JointVector(state.q_prev.cwiseMax(lo).cwiseMin(hi));
  if (!first && static_cast<std::size_t>(state.q_prev.size()) != hand.dof()) {
    throw DimensionError("retarget: state dimension does not match hand model");
  }
  const JointVector anchor = q;
  const double beta = first ? 0.0 : config.beta;
  const bool newton = config.step_rule == StepRule::Backtracking;

  Evaluation ev = evaluate(hand, q, targets, config, anchor, beta, newton);
  if (!std::isfinite(ev.value) || !ev.gradient.allFinite()) {
    throw RetargetError("retarget: non-finite objective at start point");
  }

  SolveStats local;
  local.objective_history.push_back(ev.value);
  double lambda = 1e-6;  // Levenberg-Marquardt damping, relative to the largest curvature
  int it = 0;
  for (; it < config.max_iters; ++it) {
    const Eigen::VectorXd pg = projected_gradient(ev.gradient, q, lo, hi);
    if (pg.norm() <= config.grad_tol) {
      local.converged = true;
      break;
    }

    JointVector q_next;
    Evaluation next;
    if (!newton) {
      q_next = (q - config.fixed_step * ev.gradient).cwiseMax(lo).cwiseMin(hi);
      next = evaluate(hand, q_next, targets, config, anchor, beta, false);
    } else {
      // Projected Newton (Gauss-Newton curvature): variables held at a bound by the gradient
      // take a diagonally scaled gradient step, the free block takes a Newton step.
      const Eigen::Index n = q.size();
      const double band =
          std::min(1e-6, (q - (q - ev.gradient).cwiseMax(lo).cwiseMin(hi)).norm());
      std::vector<Eigen::Index> free_idx;
      Eigen::VectorXd dir = Eigen::VectorXd::Zero(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const bool held = (q[i] <= lo[i] + band && ev.gradient[i] > 0.0) ||
                          (q[i] >= hi[i] - band && ev.gradient[i] < 0.0);
        if (held) {
          dir[i] = ev.gradient[i] / std::max(ev.gauss_newton(i, i), 1e-12);
        } else {
          free_idx.push_back(i);
        }
      }
      if (!free_idx.empty()) {
        const auto m = static_cast<Eigen::Index>(free_idx.size());
        Eigen::MatrixXd hff(m, m);
        Eigen::VectorXd gf(m);
        for (Eigen::Index a = 0; a < m; ++a) {
          gf[a] = ev.gradient[free_idx[a]];
          for (Eigen::Index b = 0; b < m; ++b) hff(a, b) = ev.gauss_newton(free_idx[a], free_idx[b]);
        }
        hff.diagonal().array() += lambda * hff.diagonal().maxCoeff() + 1e-15;
        const Eigen::VectorXd df = hff.ldlt().solve(gf);
        if (df.allFinite() && df.dot(gf) > 0.0) {
          for (Eigen::Index a = 0; a < m; ++a) dir[free_idx[a]] = df[a];
        } else {
          for (Eigen::Index a = 0; a < m; ++a) dir[free_idx[a]] = gf[a];
        }
      }

      double step = 1.0;
      bool accepted = false;
      for (int bt = 0; bt < config.max_backtracks; ++bt, step *= config.shrink) {
        q_next = (q - step * dir).cwiseMax(lo).cwiseMin(hi);
        const double predicted = ev.gradient.dot(q - q_next);
        if (predicted <= 0.0) continue;
        next = evaluate(hand, q_next, targets, config, anchor, beta, true);
        if (std::isfinite(next.value) && next.value <= ev.value - config.armijo_c * predicted) {
          accepted = true;
          break;
        }
      }
      if (!accepted) break;  // no decrease representable at this precision
      lambda = step == 1.0 ? std::max(lambda * 0.3, 1e-12) : std::min(lambda * 10.0, 1e3);
    }
    if (!std::isfinite(next.value) || !next.gradient.allFinite()) {
      throw RetargetError("retarget: non-finite objective during iteration");
    }
    q = std::move(q_next);
    ev = std::move(next);
    local.objective_history.push_back(ev.value);
  }

  local.iterations = it;
  local.final_objective = ev.value;
  local.projected_gradient_norm = projected_gradient(ev.gradient, q, lo, hi).norm();
  if (local.projected_gradient_norm <= config.grad_tol) local.converged = true;
  if (stats) *stats = std::move(local);

  state.q_prev = q;
  state.initialized = true;
  return q;
}

std::vector<JointVector> retarget_trajectory(const HandModel& glove, const HandModel& hand,
                                             const std::vector<JointVector>& glove_traj,
                                             const RetargetConfig& config) {
  if (glove_traj.empty()) throw RetargetError("retarget: empty trajectory");
  Retargeter rt(glove, hand, config);
  std::vector<JointVector> out;
  out.reserve(glove_traj.size());
  for (std::size_t k = 0; k < glove_traj.size(); ++k) {
    try {
      out.push_back(rt.step(glove_traj[k]));
    } catch (const Error& e) {
      throw RetargetError("frame " + std::to_string(k) + ": " + e.what(), k);
    }
  }
  return out;
}

Retargeter::Retargeter(const HandModel& glove, const HandModel& hand, RetargetConfig config)
    : glove_(&glove), hand_(&hand), config_(std::move(config)) {
  set_config(config_);
}

void Retargeter::set_config(RetargetConfig config) {
  config.validate();
  for (const auto& s : config.specs) {
    for (const HandModel* m : {glove_, hand_}) {
      m->finger_index(s.to);
      if (s.kind == KeyVectorKind::TipToTip) m->finger_index(s.from);
    }
  }
  config_ = std::move(config);
}

JointVector Retargeter::step(const JointVector& q_glove, SolveStats* stats) {
  const auto u = glove_keyvectors(*glove_, q_glove, config_.specs);
  return solve_frame(*hand_, u, state_, config_, stats);
}

}  // namespace gex
