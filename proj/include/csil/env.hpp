#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "csil/rng.hpp"

namespace csil {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class EnvKind { LinReach, NonlinReach };

// Finite-horizon point-mass reacher. State is [position; velocity], the
// action accelerates the mass inside a bounded box.
//
// LinReach:    p' = p + dt*v
//              v' = (1-damping)*v + dt*clip(a) + noise_std*noise
// NonlinReach: adds dt*drift(p) to v', where
//              drift_j(p) = drift_gain * sign_j * sin(p_{(j+1) mod m}),
//              sign_j = +1 for even j, -1 for odd j (a fixed bounded swirl).
//
// Reward scores the state reached by the step:
//   r = -||p' - goal||^2 - action_cost*||clip(a)||^2
struct EnvSpec {
  EnvKind kind = EnvKind::LinReach;
  int state_dim = 4;
  int action_dim = 2;
  int horizon = 25;
  Vector action_low;
  Vector action_high;
  double noise_std = 0.0;
  Vector goal;
  double damping = 0.1;
  double dt = 0.1;
  double action_cost = 0.0;
  double start_box_width = 0.5;
  double drift_gain = 0.3;

  int position_dim() const { return state_dim / 2; }

  void validate() const {
    if (state_dim <= 0 || state_dim % 2 != 0)
      throw std::invalid_argument("EnvSpec: state_dim must be positive and even");
    if (action_dim != position_dim())
      throw std::invalid_argument("EnvSpec: action_dim must equal state_dim/2");
    if (horizon < 1) throw std::invalid_argument("EnvSpec: horizon must be >= 1");
    if (action_low.size() != action_dim || action_high.size() != action_dim)
      throw std::invalid_argument("EnvSpec: action bounds must have action_dim entries");
    for (int j = 0; j < action_dim; ++j)
      if (!(action_low[j] < action_high[j]))
        throw std::invalid_argument("EnvSpec: action_low must be < action_high in every dimension");
    if (goal.size() != position_dim())
      throw std::invalid_argument("EnvSpec: goal must live in the position subspace");
    if (noise_std < 0) throw std::invalid_argument("EnvSpec: noise_std must be >= 0");
    if (action_cost < 0) throw std::invalid_argument("EnvSpec: action_cost must be >= 0");
    if (damping < 0 || damping >= 1) throw std::invalid_argument("EnvSpec: damping must be in [0,1)");
    if (!(dt > 0)) throw std::invalid_argument("EnvSpec: dt must be positive");
    if (start_box_width < 0) throw std::invalid_argument("EnvSpec: start_box_width must be >= 0");
  }
};

inline EnvSpec make_lin_reach(int horizon = 25, double noise_std = 0.0) {
  EnvSpec env;
  env.kind = EnvKind::LinReach;
  env.horizon = horizon;
  env.noise_std = noise_std;
  env.action_low = Vector::Constant(2, -1.0);
  env.action_high = Vector::Constant(2, 1.0);
  env.goal = Vector::Zero(2);
  env.goal << 0.6, -0.4;
  env.action_cost = 0.05;
  return env;
}

inline EnvSpec make_nonlin_reach(int horizon = 25, double noise_std = 0.0) {
  EnvSpec env = make_lin_reach(horizon, noise_std);
  env.kind = EnvKind::NonlinReach;
  return env;
}

// Euclidean diameter of the action box; the widest any two labels can be apart.
inline double action_diameter(const EnvSpec& env) {
  return (env.action_high - env.action_low).norm();
}

inline Vector clip_action(const EnvSpec& env, const Vector& a) {
  return a.cwiseMax(env.action_low).cwiseMin(env.action_high);
}

struct Trajectory {
  Matrix states;   // (T+1) x state_dim
  Matrix actions;  // T x action_dim, raw controller outputs
  Matrix applied;  // T x action_dim, clipped actions fed to the dynamics
  Vector rewards;  // T
  std::uint64_t seed = 0;

  double total_reward() const { return rewards.sum(); }
};

using Controller = std::function<Vector(const Vector&)>;

namespace detail {
inline void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw std::invalid_argument(std::string(what) + " contains non-finite entries");
}
}  // namespace detail

// Start positions are uniform in a box of width start_box_width centered at
// the origin; start velocities are zero.
inline Vector reset(const EnvSpec& env, std::uint64_t seed) {
  env.validate();
  const int m = env.position_dim();
  Vector s = Vector::Zero(env.state_dim);
  Rng rng(hash_combine(seed, 0x5e5e7));
  const double half = env.start_box_width / 2.0;
  for (int j = 0; j < m; ++j) s[j] = rng.uniform(-half, half);
  return s;
}

inline std::pair<Vector, double> step(const EnvSpec& env, const Vector& state, const Vector& action,
                                      const Vector& noise_draw) {
  detail::require_finite(state, "step: state");
  detail::require_finite(action, "step: action");
  if (state.size() != env.state_dim) throw std::invalid_argument("step: state dimension mismatch");
  if (action.size() != env.action_dim) throw std::invalid_argument("step: action dimension mismatch");
  if (noise_draw.size() != env.position_dim())
    throw std::invalid_argument("step: noise_draw must have one entry per velocity dimension");

  const int m = env.position_dim();
  const Vector p = state.head(m);
  const Vector v = state.tail(m);
  const Vector a = clip_action(env, action);

  Vector next(env.state_dim);
  next.head(m) = p + env.dt * v;
  Vector vnext = (1.0 - env.damping) * v + env.dt * a + env.noise_std * noise_draw;
  if (env.kind == EnvKind::NonlinReach) {
    for (int j = 0; j < m; ++j) {
      const double sign = (j % 2 == 0) ? 1.0 : -1.0;
      vnext[j] += env.dt * env.drift_gain * sign * std::sin(p[(j + 1) % m]);
    }
  }
  next.tail(m) = vnext;

  const double reward = -(next.head(m) - env.goal).squaredNorm() - env.action_cost * a.squaredNorm();
  return {std::move(next), reward};
}

inline Trajectory rollout(const EnvSpec& env, const Controller& controller, std::uint64_t seed) {
  env.validate();
  const int T = env.horizon;
  const int m = env.position_dim();
  Trajectory traj;
  traj.seed = seed;
  traj.states.resize(T + 1, env.state_dim);
  traj.actions.resize(T, env.action_dim);
  traj.applied.resize(T, env.action_dim);
  traj.rewards.resize(T);

  Vector s = reset(env, seed);
  traj.states.row(0) = s;
  Rng noise(hash_combine(seed, 0xbadd1e));
  for (int t = 0; t < T; ++t) {
    Vector a = controller(s);
    if (a.size() != env.action_dim)
      throw std::invalid_argument("rollout: controller returned action of wrong dimension at step " +
                                  std::to_string(t));
    detail::require_finite(a, "rollout: controller action");
    traj.actions.row(t) = a;
    traj.applied.row(t) = clip_action(env, a);
    auto [next, reward] = step(env, s, a, noise.normal_vector(m));
    traj.rewards[t] = reward;
    s = std::move(next);
    traj.states.row(t + 1) = s;
  }
  return traj;
}

}  // namespace csil
