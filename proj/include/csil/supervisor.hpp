#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>

#include <Eigen/Dense>

#include "csil/cem.hpp"
#include "csil/dynamics.hpp"
#include "csil/env.hpp"

namespace csil {

// Indexed labelers. A synthetic supervisor perturbs a fixed PD rule by a
// decaying smooth field with a known envelope, so label convergence is exact
// and checkable; an MPC supervisor plans over a learned dynamics ensemble
// with the cross-entropy method. Labels are always clipped into the action
// box, so any two labels are at most the box diameter apart.

enum class ScheduleKind { Harmonic, Sqrt, Geometric, Constant };

struct RateSchedule {
  ScheduleKind kind = ScheduleKind::Harmonic;
  double c = 0.4;
  double rho = 0.9;

  void validate() const {
    if (c < 0) throw std::invalid_argument("RateSchedule: c must be >= 0");
    if (kind == ScheduleKind::Geometric && !(rho > 0 && rho < 1))
      throw std::invalid_argument("RateSchedule: rho must lie in (0,1)");
  }

  // Envelope at round i >= 1. c = 0 degenerates to a fixed supervisor.
  double value(int i) const {
    switch (kind) {
      case ScheduleKind::Harmonic: return c / i;
      case ScheduleKind::Sqrt: return c / std::sqrt(static_cast<double>(i));
      case ScheduleKind::Geometric: return c * std::pow(rho, i);
      case ScheduleKind::Constant: return c;
    }
    return c;
  }
};

// Smooth perturbation direction with ||u(s)|| <= 1 everywhere (= 1 exactly
// for even action dimensions): sin/cos pairs of fixed linear functionals of
// the state, jointly normalized.
inline Vector perturbation_field(const Vector& s, int action_dim) {
  const int pairs = (action_dim + 1) / 2;
  Vector u = Vector::Zero(action_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(pairs));
  for (int k = 0; k < pairs; ++k) {
    double z = 0.0;
    for (Eigen::Index j = 0; j < s.size(); ++j)
      z += std::cos(0.9 * (k + 1) * (j + 1)) * s[j];
    u[2 * k] = std::sin(z) * scale;
    if (2 * k + 1 < action_dim) u[2 * k + 1] = std::cos(z) * scale;
  }
  return u;
}

// The synthetic target rule: a PD law toward the goal (not clipped here).
inline Vector pd_rule(const EnvSpec& env, double kp, double kd, const Vector& s) {
  const int m = env.position_dim();
  return kp * (env.goal - s.head(m)) - kd * s.tail(m);
}

enum class SupervisorKind { Synthetic, MpcCem };

struct SupervisorHandle {
  SupervisorKind kind = SupervisorKind::Synthetic;
  int index = 1;  // round this labeler belongs to
  EnvSpec env;

  // Synthetic
  RateSchedule schedule;
  bool alternating = false;  // flips the perturbation sign by round parity
  double kp = 1.5;
  double kd = 0.8;

  // MpcCem
  std::shared_ptr<const DynamicsEnsemble> ensemble;
  CemConfig plan;
  std::uint64_t seed_base = 0;
};

inline SupervisorHandle make_synthetic_supervisor(const EnvSpec& env, const RateSchedule& schedule,
                                                  int index, bool alternating = false,
                                                  double kp = 1.5, double kd = 0.8) {
  schedule.validate();
  if (index < 1) throw std::invalid_argument("supervisor index must be >= 1");
  SupervisorHandle h;
  h.kind = SupervisorKind::Synthetic;
  h.index = index;
  h.env = env;
  h.schedule = schedule;
  h.alternating = alternating;
  h.kp = kp;
  h.kd = kd;
  return h;
}

inline SupervisorHandle make_mpc_supervisor(const EnvSpec& env,
                                            std::shared_ptr<const DynamicsEnsemble> ensemble,
                                            const CemConfig& plan, int index,
                                            std::uint64_t seed_base) {
  plan.validate();
  if (!ensemble) throw std::invalid_argument("mpc supervisor needs a dynamics ensemble");
  if (index < 1) throw std::invalid_argument("supervisor index must be >= 1");
  SupervisorHandle h;
  h.kind = SupervisorKind::MpcCem;
  h.index = index;
  h.env = env;
  h.ensemble = std::move(ensemble);
  h.plan = plan;
  h.seed_base = seed_base;
  return h;
}

// Advances a batch of particle states under one model; rows are particles.
using BatchModel = std::function<Matrix(int model, const Matrix& S, const Matrix& A)>;

// CEM planning over an arbitrary batch model. Each particle keeps one model
// for the whole horizon; a candidate's score is its mean return across the
// model particles, with rewards taken from the true reward function.
inline CemResult cem_plan_model(const BatchModel& model, int n_models, const Vector& state,
                                const EnvSpec& env, const CemConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (n_models < 1) throw std::invalid_argument("cem_plan_model: need at least one model");
  const int m = env.position_dim();
  // With deterministic models, particles beyond one per member are exact
  // duplicates, so the mean over n_models already covers every particle.

  BatchObjective evaluate = [&](const std::vector<Matrix>& candidates) {
    const int P = static_cast<int>(candidates.size());
    Vector returns = Vector::Zero(P);
    for (int model_idx = 0; model_idx < n_models; ++model_idx) {
      Matrix S = state.transpose().replicate(P, 1);
      for (int t = 0; t < cfg.horizon; ++t) {
        Matrix A(P, env.action_dim);
        for (int p = 0; p < P; ++p) A.row(p) = candidates[p].row(t);
        S = model(model_idx, S, A);
        for (int p = 0; p < P; ++p) {
          const double dist2 = (S.row(p).head(m).transpose() - env.goal).squaredNorm();
          returns[p] += -dist2 - env.action_cost * A.row(p).squaredNorm();
        }
      }
    }
    return Vector(returns / n_models);
  };

  return cem_optimize(evaluate, env.action_low, env.action_high, cfg, seed);
}

inline CemResult cem_plan(const DynamicsEnsemble& ensemble, const Vector& state,
                          const EnvSpec& env, const CemConfig& cfg, std::uint64_t seed) {
  BatchModel model = [&ensemble](int e, const Matrix& S, const Matrix& A) {
    return predict_batch(ensemble, e, S, A);
  };
  return cem_plan_model(model, ensemble.member_count(), state, env, cfg, seed);
}

// Exact noiseless environment dynamics as the planning model.
inline CemResult cem_plan_oracle(const Vector& state, const EnvSpec& env, const CemConfig& cfg,
                                 std::uint64_t seed) {
  EnvSpec noiseless = env;
  noiseless.noise_std = 0.0;
  BatchModel model = [noiseless](int, const Matrix& S, const Matrix& A) {
    Matrix next(S.rows(), S.cols());
    const Vector zero = Vector::Zero(noiseless.position_dim());
    for (Eigen::Index r = 0; r < S.rows(); ++r)
      next.row(r) = step(noiseless, S.row(r), A.row(r), zero).first;
    return next;
  };
  return cem_plan_model(model, 1, state, env, cfg, seed);
}

inline std::uint64_t planner_seed_for(const SupervisorHandle& sup, const Vector& state) {
  return hash_combine(hash_combine(sup.seed_base, static_cast<std::uint64_t>(sup.index)),
                      hash_vector(state));
}

inline Vector label(const SupervisorHandle& sup, const Vector& state) {
  if (!state.allFinite()) throw std::invalid_argument("label: non-finite state");
  if (sup.kind == SupervisorKind::Synthetic) {
    double amplitude = sup.schedule.value(sup.index);
    if (sup.alternating && sup.index % 2 == 1) amplitude = -amplitude;
    Vector a = pd_rule(sup.env, sup.kp, sup.kd, state) +
               amplitude * perturbation_field(state, sup.env.action_dim);
    return clip_action(sup.env, a);
  }
  CemResult plan = cem_plan(*sup.ensemble, state, sup.env, sup.plan, planner_seed_for(sup, state));
  return clip_action(sup.env, plan.sequence.row(0));
}

// Config-level description of a supervisor sequence.
struct SupervisorSpec {
  SupervisorKind kind = SupervisorKind::Synthetic;
  // Synthetic
  RateSchedule schedule;
  bool alternating = false;
  double kp = 1.5;
  double kd = 0.8;
  // MpcCem
  CemConfig plan;
  DynamicsConfig dynamics;
  int seed_rollouts = 1;  // random rollouts that seed the dynamics buffer
};

// Drives the indexed sequence across rounds. Synthetic sequences are
// stateless; the MPC sequence accumulates learner transitions and refits its
// ensemble every round before labeling.
class SupervisorSequence {
 public:
  SupervisorSequence(EnvSpec env, SupervisorSpec spec, std::uint64_t run_seed)
      : env_(std::move(env)), spec_(std::move(spec)), run_seed_(run_seed) {
    if (spec_.kind == SupervisorKind::MpcCem) {
      EnvSpec rollout_env = env_;
      for (int k = 0; k < spec_.seed_rollouts; ++k) {
        Rng rng(hash_combine(run_seed_, 0x5eed + k));
        auto traj = rollout(
            rollout_env,
            [&](const Vector&) {
              Vector a(env_.action_dim);
              for (int d = 0; d < env_.action_dim; ++d)
                a[d] = rng.uniform(env_.action_low[d], env_.action_high[d]);
              return a;
            },
            hash_combine(run_seed_, 0x0e9 + k));
        buffer_.append_trajectory(traj, 0);
      }
    }
  }

  void observe_episode(const Trajectory& traj, int round) {
    if (spec_.kind == SupervisorKind::MpcCem) buffer_.append_trajectory(traj, round);
  }

  // The labeler for round i; for MPC this refits the ensemble on everything
  // observed so far.
  SupervisorHandle for_round(int i) {
    if (i < 1) throw std::invalid_argument("SupervisorSequence: rounds are 1-based");
    last_round_ = std::max(last_round_, i);
    if (spec_.kind == SupervisorKind::Synthetic) {
      last_handle_ = make_synthetic_supervisor(env_, spec_.schedule, i, spec_.alternating,
                                               spec_.kp, spec_.kd);
      return *last_handle_;
    }
    DynamicsConfig cfg = spec_.dynamics;
    cfg.seed = hash_combine(run_seed_, 0xd77 + static_cast<std::uint64_t>(i));
    auto ens = std::make_shared<const DynamicsEnsemble>(fit_dynamics(buffer_, cfg));
    last_handle_ = make_mpc_supervisor(env_, ens, spec_.plan, i,
                                       hash_combine(run_seed_, 0x91a7));
    return *last_handle_;
  }

  // The frozen final labeler, usable to relabel any stored state.
  SupervisorHandle snapshot_final() const {
    if (!last_handle_)
      throw std::logic_error("snapshot_final: no rounds have run yet");
    return *last_handle_;
  }

  const TransitionBuffer& transitions() const { return buffer_; }
  int rounds_seen() const { return last_round_; }

 private:
  EnvSpec env_;
  SupervisorSpec spec_;
  std::uint64_t run_seed_ = 0;
  TransitionBuffer buffer_;
  int last_round_ = 0;
  std::optional<SupervisorHandle> last_handle_;
};

}  // namespace csil
