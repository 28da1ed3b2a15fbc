#pragma once

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "csil/env.hpp"
#include "csil/mlp.hpp"

namespace csil {

// Transition store and the deterministic dynamics ensemble fit on it.
// Members regress the normalized residual ds = s' - s from [s; a]; epistemic
// disagreement between members is the only uncertainty the planner sees.

struct TransitionBuffer {
  Matrix states;       // n x state_dim
  Matrix actions;      // n x action_dim, applied (clipped) actions
  Matrix next_states;  // n x state_dim
  std::vector<int> episodes;

  int size() const { return static_cast<int>(states.rows()); }

  void append(const Vector& s, const Vector& a, const Vector& s_next, int episode) {
    if (size() > 0 && (s.size() != states.cols() || a.size() != actions.cols() ||
                       s_next.size() != states.cols()))
      throw std::invalid_argument("TransitionBuffer: dimension mismatch");
    if (!s.allFinite() || !a.allFinite() || !s_next.allFinite())
      throw std::invalid_argument("TransitionBuffer: non-finite transition");
    const int n = size();
    states.conservativeResize(n + 1, s.size());
    actions.conservativeResize(n + 1, a.size());
    next_states.conservativeResize(n + 1, s_next.size());
    states.row(n) = s;
    actions.row(n) = a;
    next_states.row(n) = s_next;
    episodes.push_back(episode);
  }

  void append_trajectory(const Trajectory& traj, int episode) {
    const int T = static_cast<int>(traj.applied.rows());
    const int n = size();
    const auto sd = traj.states.cols();
    const auto ad = traj.applied.cols();
    if (n > 0 && (sd != states.cols() || ad != actions.cols()))
      throw std::invalid_argument("TransitionBuffer: trajectory dimension mismatch");
    states.conservativeResize(n + T, sd);
    actions.conservativeResize(n + T, ad);
    next_states.conservativeResize(n + T, sd);
    states.middleRows(n, T) = traj.states.topRows(T);
    actions.middleRows(n, T) = traj.applied;
    next_states.middleRows(n, T) = traj.states.bottomRows(T);
    for (int t = 0; t < T; ++t) episodes.push_back(episode);
  }
};

struct Normalizer {
  Vector mean;
  Vector std;

  static Normalizer fit(const Matrix& X) {
    Normalizer n;
    n.mean = X.colwise().mean();
    Matrix centered = X.rowwise() - n.mean.transpose();
    n.std = (centered.array().square().colwise().mean()).sqrt();
    n.std = n.std.cwiseMax(1e-8);  // degenerate columns stay harmless
    return n;
  }

  static Normalizer identity(int dim) {
    Normalizer n;
    n.mean = Vector::Zero(dim);
    n.std = Vector::Ones(dim);
    return n;
  }

  Matrix normalize(const Matrix& X) const {
    return (X.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array();
  }
  Matrix denormalize(const Matrix& Z) const {
    return (Z.array().rowwise() * std.transpose().array()).matrix().rowwise() + mean.transpose();
  }
  Vector normalize(const Vector& x) const { return (x - mean).cwiseQuotient(std); }
  Vector denormalize(const Vector& z) const { return z.cwiseProduct(std) + mean; }
};

struct DynamicsConfig {
  int members = 3;
  int hidden_units = 32;
  Activation activation = Activation::Swish;
  int epochs = 300;
  double step_size = 1e-3;  // Adam
  int batch_size = 16;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct DynamicsEnsemble {
  MlpSpec member_spec;
  std::vector<Vector> members;
  Normalizer input_norm;
  Normalizer target_norm;
  Vector holdout_mse;  // per member, per-entry squared error on raw state units
  std::uint64_t seed = 0;
  int state_dim = 0;
  int action_dim = 0;

  int member_count() const { return static_cast<int>(members.size()); }
};

// All-zero member parameters with identity normalization: predicts s' = s.
inline DynamicsEnsemble make_identity_ensemble(int state_dim, int action_dim, int members = 3,
                                               int hidden_units = 32) {
  DynamicsEnsemble ens;
  ens.state_dim = state_dim;
  ens.action_dim = action_dim;
  ens.member_spec.input = state_dim + action_dim;
  ens.member_spec.output = state_dim;
  ens.member_spec.hidden = {hidden_units};
  ens.input_norm = Normalizer::identity(state_dim + action_dim);
  ens.target_norm = Normalizer::identity(state_dim);
  for (int e = 0; e < members; ++e)
    ens.members.push_back(Vector::Zero(ens.member_spec.param_count()));
  return ens;
}

inline DynamicsEnsemble fit_dynamics(const TransitionBuffer& buffer, const DynamicsConfig& cfg) {
  if (buffer.size() == 0) throw std::invalid_argument("fit_dynamics: empty transition buffer");
  if (buffer.size() < 2 * cfg.batch_size)
    throw std::invalid_argument("fit_dynamics: buffer holds " + std::to_string(buffer.size()) +
                                " transitions, need at least 2x batch_size = " +
                                std::to_string(2 * cfg.batch_size));
  if (cfg.members < 1) throw std::invalid_argument("fit_dynamics: need at least one member");

  const int n = buffer.size();
  const int n_hold = std::max(1, static_cast<int>(n * cfg.holdout_fraction));
  const int n_train = n - n_hold;

  Matrix inputs(n, buffer.states.cols() + buffer.actions.cols());
  inputs << buffer.states, buffer.actions;
  Matrix targets = buffer.next_states - buffer.states;

  DynamicsEnsemble ens;
  ens.state_dim = static_cast<int>(buffer.states.cols());
  ens.action_dim = static_cast<int>(buffer.actions.cols());
  ens.member_spec.input = ens.state_dim + ens.action_dim;
  ens.member_spec.output = ens.state_dim;
  ens.member_spec.hidden = {cfg.hidden_units};
  ens.member_spec.activation = cfg.activation;
  ens.seed = cfg.seed;
  ens.input_norm = Normalizer::fit(inputs.topRows(n_train));
  ens.target_norm = Normalizer::fit(targets.topRows(n_train));

  const Matrix Xtrain = ens.input_norm.normalize(Matrix(inputs.topRows(n_train)));
  const Matrix Ytrain = ens.target_norm.normalize(Matrix(targets.topRows(n_train)));

  ens.holdout_mse.resize(cfg.members);
  for (int e = 0; e < cfg.members; ++e) {
    const std::uint64_t member_seed = hash_combine(cfg.seed, 0xd00 + e);
    Vector params = mlp_init(ens.member_spec, member_seed, /*zero_output_layer=*/true);
    MlpTrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.step_size = cfg.step_size;
    tc.batch_size = cfg.batch_size;
    tc.optimizer = Optimizer::Adam;
    tc.seed = member_seed;
    auto tr = mlp_train(ens.member_spec, params, Xtrain, Ytrain, tc);
    if (tr.diverged) throw std::runtime_error("fit_dynamics: member " + std::to_string(e) +
                                              " diverged; reduce step_size");
    ens.members.push_back(std::move(params));

    Matrix pred_norm = mlp_forward_batch(ens.member_spec, ens.members.back(),
                                         ens.input_norm.normalize(Matrix(inputs.bottomRows(n_hold))));
    Matrix pred_ds = ens.target_norm.denormalize(pred_norm);
    Matrix err = pred_ds - targets.bottomRows(n_hold);
    ens.holdout_mse[e] = err.array().square().mean();
  }
  return ens;
}

inline Vector predict(const DynamicsEnsemble& ens, int member, const Vector& s, const Vector& a) {
  if (member < 0 || member >= ens.member_count())
    throw std::out_of_range("predict: member index out of range");
  Vector x(s.size() + a.size());
  x << s, a;
  Vector ds = ens.target_norm.denormalize(
      mlp_forward(ens.member_spec, ens.members[member], ens.input_norm.normalize(x)));
  return s + ds;
}

inline Matrix predict_batch(const DynamicsEnsemble& ens, int member, const Matrix& S,
                            const Matrix& A) {
  if (member < 0 || member >= ens.member_count())
    throw std::out_of_range("predict_batch: member index out of range");
  Matrix X(S.rows(), S.cols() + A.cols());
  X << S, A;
  Matrix ds = ens.target_norm.denormalize(
      mlp_forward_batch(ens.member_spec, ens.members[member], ens.input_norm.normalize(X)));
  return S + ds;
}

// Largest pairwise prediction distance across members; the planner's
// epistemic diagnostic.
inline double member_disagreement(const DynamicsEnsemble& ens, const Vector& s, const Vector& a) {
  double worst = 0.0;
  std::vector<Vector> preds;
  for (int e = 0; e < ens.member_count(); ++e) preds.push_back(predict(ens, e, s, a));
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = i + 1; j < preds.size(); ++j)
      worst = std::max(worst, (preds[i] - preds[j]).norm());
  return worst;
}

}  // namespace csil
