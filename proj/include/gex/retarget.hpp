// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gex/kinematics.hpp"

namespace gex {

enum class KeyVectorKind { PalmToTip, TipToTip };

/// Displacement between two task-space points: palm origin -> tip, or tip(from) -> tip(to).
struct KeyVectorSpec {
  KeyVectorKind kind = KeyVectorKind::PalmToTip;
  std::string from = "palm";
  std::string to;
  double weight = 1.0;
};

enum class StepRule { Fixed, Backtracking };

struct RetargetConfig {
  std::vector<KeyVectorSpec> specs;
  double alpha = 1.0;  // scale applied to glove vectors
  double beta = 1e-2;  // weight of ||q - q_prev||^2
  int max_iters = 50;
  double grad_tol = 1e-8;  // m^2/rad, on the projected gradient
  StepRule step_rule = StepRule::Backtracking;
  double fixed_step = 1.0;       // used with StepRule::Fixed
  double armijo_c = 1e-4;
  double shrink = 0.5;
  int max_backtracks = 40;

  /// 3 palm-to-tip (weight 1) and 3 pairwise tip-to-tip (weight 2) vectors.
  static RetargetConfig defaults();
  void validate() const;
};

struct RetargetState {
  JointVector q_prev;
  bool initialized = false;
};

class RetargetError : public Error {
 public:
  RetargetError(const std::string& what, std::size_t frame = 0) : Error(what), frame_(frame) {}
  std::size_t frame() const { return frame_; }

 private:
  std::size_t frame_;
};

/// Key vectors of `model` at joint configuration `q`, in spec order.
std::vector<Vec3> keyvectors(const HandModel& model, const JointVector& q,
                             const std::vector<KeyVectorSpec>& specs);

/// Same as keyvectors(); named for the glove side of the mapping.
inline std::vector<Vec3> glove_keyvectors(const HandModel& glove, const JointVector& q_glove,
                                          const std::vector<KeyVectorSpec>& specs) {
  return keyvectors(glove, q_glove, specs);
}

struct ObjectiveValue {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

/// E(q) = sum_k w_k |v_k(q) - alpha u_k|^2 + beta |q - q_prev|^2 and its gradient.
ObjectiveValue objective_and_gradient(const HandModel& hand, const JointVector& q,
                                      const std::vector<Vec3>& targets, const RetargetConfig& config,
                                      const JointVector& q_prev, double beta);

inline ObjectiveValue objective_and_gradient(const HandModel& hand, const JointVector& q,
                                             const std::vector<Vec3>& targets,
                                             const RetargetConfig& config, const JointVector& q_prev) {
  return objective_and_gradient(hand, q, targets, config, q_prev, config.beta);
}

struct SolveStats {
  int iterations = 0;
  double final_objective = 0.0;
  double projected_gradient_norm = 0.0;
  bool converged = false;
  std::vector<double> objective_history;  // value after each accepted iterate, starting point first
};

/// One retargeting frame. Starts from state.q_prev (or mid-range on the first frame, where the
/// smoothing term is inactive), iterates projected descent steps, and stores the result back
/// into the state. The result always lies within the hand's joint limits.
JointVector solve_frame(const HandModel& hand, const std::vector<Vec3>& targets, RetargetState& state,
                        const RetargetConfig& config, SolveStats* stats = nullptr);

/// Sequential solve_frame over a glove trajectory with a shared state.
std::vector<JointVector> retarget_trajectory(const HandModel& glove, const HandModel& hand,
                                             const std::vector<JointVector>& glove_traj,
                                             const RetargetConfig& config);

/// Stateful helper bundling both models, config and warm-start state.
class Retargeter {
 public:
  Retargeter(const HandModel& glove, const HandModel& hand, RetargetConfig config);

  JointVector step(const JointVector& q_glove, SolveStats* stats = nullptr);
  void reset() { state_ = {}; }

  const RetargetConfig& config() const { return config_; }
  void set_config(RetargetConfig config);
  const RetargetState& state() const { return state_; }

 private:
  const HandModel* glove_;
  const HandModel* hand_;
  RetargetConfig config_;
  RetargetState state_;
};

}  // namespace gex
