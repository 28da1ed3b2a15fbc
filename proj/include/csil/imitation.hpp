#pragma once

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "csil/env.hpp"
#include "csil/policy.hpp"
#include "csil/supervisor.hpp"

namespace csil {

// The on-policy training loop: execute the current policy, relabel the
// visited states with the round's supervisor, update. Per-round losses are
// the mean squared action gap on the recorded states plus the l2 regularizer
// that supplies strong convexity (alpha = 2 * alpha_reg).

struct RoundRecord {
  int round = 0;               // 1-based
  Eigen::VectorXd theta;       // parameters played this round
  Matrix states;               // (rollouts * T) x state_dim
  Matrix labels_current;       // labels from the round supervisor
  Matrix labels_final;         // backfilled from the final supervisor
  bool has_final_labels = false;
  double loss_vs_current = 0.0;
  double loss_vs_final = 0.0;
  double learner_query_us = 0.0;     // mean per act call (wall clock)
  double supervisor_query_us = 0.0;  // mean per label call (wall clock)
  double episode_return_learner = 0.0;
  double episode_return_supervisor = std::numeric_limits<double>::quiet_NaN();
};

enum class PlayerKind { DaggerAggregate, GreedyPerRound, Ogd };

struct PlayerConfig {
  PlayerKind kind = PlayerKind::DaggerAggregate;
  int rollouts_per_round = 1;  // trajectories per round standing in for the on-policy expectation
  double alpha_reg = 1.0;
  double ogd_step_numerator = 1.0;  // eta_i = numerator / (alpha * i)
  FitMlpConfig mlp;                 // used when the policy is an ensemble

  double strong_convexity() const { return 2.0 * alpha_reg; }

  void validate() const {
    if (rollouts_per_round < 1)
      throw std::invalid_argument("PlayerConfig: rollouts_per_round must be >= 1");
    if (!(alpha_reg > 0)) throw std::invalid_argument("PlayerConfig: alpha_reg must be positive");
  }
};

inline double empirical_loss(const PolicyParams& params, const Matrix& states,
                             const Matrix& labels, double alpha_reg) {
  if (states.rows() == 0) throw std::invalid_argument("empirical_loss: empty state set");
  if (states.rows() != labels.rows())
    throw std::invalid_argument("empirical_loss: states/labels misaligned");
  const Matrix pred = act_batch(params, states);
  return (pred - labels).squaredNorm() / states.rows() +
         alpha_reg * params.theta.squaredNorm();
}

inline Eigen::VectorXd loss_gradient(const PolicyParams& params, const Matrix& states,
                                     const Matrix& labels, double alpha_reg) {
  if (states.rows() == 0) throw std::invalid_argument("loss_gradient: empty state set");
  if (states.rows() != labels.rows())
    throw std::invalid_argument("loss_gradient: states/labels misaligned");
  const double n = static_cast<double>(states.rows());
  Eigen::VectorXd grad;
  if (params.kind == PolicyKind::LinearAffine) {
    const Matrix Phi = features_batch(params, states);
    const Matrix resid = act_batch(params, states) - labels;       // n x A
    Matrix G = (2.0 / n) * resid.transpose() * Phi;                // A x F
    grad = Eigen::Map<const Eigen::VectorXd>(G.data(), G.size());
  } else {
    grad = Eigen::VectorXd::Zero(params.dim());
    for (Eigen::Index k = 0; k < states.rows(); ++k) {
      const Vector s = states.row(k);
      const Vector r = (2.0 / n) * (act(params, s) - labels.row(k).transpose());
      accumulate_jacobian_transpose(params, s, r, grad);
    }
  }
  grad += 2.0 * alpha_reg * params.theta;
  return grad;
}

// Pools (state, label_current) pairs from a span of rounds.
inline LabeledDataset pool_rounds(const std::vector<RoundRecord>& records, int first, int last) {
  Eigen::Index total = 0;
  for (int i = first; i <= last; ++i) total += records[i].states.rows();
  LabeledDataset d;
  d.states.resize(total, records[first].states.cols());
  d.labels.resize(total, records[first].labels_current.cols());
  Eigen::Index at = 0;
  for (int i = first; i <= last; ++i) {
    const auto& r = records[i];
    d.states.middleRows(at, r.states.rows()) = r.states;
    d.labels.middleRows(at, r.states.rows()) = r.labels_current;
    at += r.states.rows();
  }
  return d;
}

// One player step from the completed history; always lands back in the ball.
inline PolicyParams update(const PlayerConfig& player, const std::vector<RoundRecord>& history,
                           const PolicyParams& current) {
  player.validate();
  if (history.empty()) throw std::invalid_argument("update: empty round history");
  const RoundRecord& last = history.back();
  if (last.labels_current.rows() != last.states.rows() || last.states.rows() == 0)
    throw std::invalid_argument("update: round record incomplete (labels missing)");

  switch (player.kind) {
    case PlayerKind::DaggerAggregate: {
      LabeledDataset all = pool_rounds(history, 0, static_cast<int>(history.size()) - 1);
      if (current.kind == PolicyKind::LinearAffine)
        return fit_ridge(all, player.alpha_reg, current);
      FitMlpConfig cfg = player.mlp;
      cfg.seed = hash_combine(player.mlp.seed, static_cast<std::uint64_t>(last.round));
      return fit_mlp(all, cfg, current).params;
    }
    case PlayerKind::GreedyPerRound: {
      LabeledDataset one = pool_rounds(history, static_cast<int>(history.size()) - 1,
                                       static_cast<int>(history.size()) - 1);
      if (current.kind == PolicyKind::LinearAffine)
        return fit_ridge(one, player.alpha_reg, current);
      FitMlpConfig cfg = player.mlp;
      cfg.seed = hash_combine(player.mlp.seed, static_cast<std::uint64_t>(last.round));
      return fit_mlp(one, cfg, current).params;
    }
    case PlayerKind::Ogd: {
      PolicyParams played = current;
      played.theta = last.theta;  // gradient is taken at the played parameters
      const double eta =
          player.ogd_step_numerator / (player.strong_convexity() * last.round);
      Eigen::VectorXd g =
          loss_gradient(played, last.states, last.labels_current, player.alpha_reg);
      PolicyParams next = current;
      next.theta = last.theta - eta * g;
      return project(std::move(next));
    }
  }
  throw std::logic_error("update: unknown player kind");
}

struct LoopConfig {
  int rounds = 50;  // N
  PlayerConfig player;
  SupervisorSpec supervisor;
  bool evaluate_supervisor_rollout = false;
};

struct LoopResult {
  std::vector<RoundRecord> records;
  PolicyParams final_params;          // theta_{N+1}
  SupervisorHandle final_supervisor;  // frozen labeler from round N
};

namespace detail {

inline double mean_us_per_call(std::chrono::steady_clock::duration total, Eigen::Index calls) {
  const double us =
      std::chrono::duration_cast<std::chrono::duration<double, std::micro>>(total).count();
  return calls > 0 ? us / calls : 0.0;
}

}  // namespace detail

// Runs N rounds and backfills every record with labels from the final
// supervisor. All stochastic choices derive from `seed`, so two calls with
// identical inputs reproduce every non-timing field bitwise.
inline LoopResult run_loop(const EnvSpec& env, const LoopConfig& cfg,
                           const PolicyParams& initial_shape, std::uint64_t seed) {
  env.validate();
  cfg.player.validate();
  if (cfg.rounds < 1) throw std::invalid_argument("run_loop: rounds must be >= 1");

  const int T = env.horizon;
  const int M = cfg.player.rollouts_per_round;

  PolicyParams params = initial_shape;
  params.theta.setZero();  // theta_1 sits at the center of the ball

  SupervisorSequence sequence(env, cfg.supervisor, seed);
  LoopResult out;
  out.records.reserve(cfg.rounds);

  for (int i = 1; i <= cfg.rounds; ++i) {
    RoundRecord rec;
    rec.round = i;
    rec.theta = params.theta;
    rec.states.resize(static_cast<Eigen::Index>(M) * T, env.state_dim);

    double return_sum = 0.0;
    try {
      for (int m = 0; m < M; ++m) {
        auto traj = rollout(
            env, [&](const Vector& s) { return act(params, s); },
            hash_combine(seed, 0xe9150de + static_cast<std::uint64_t>(i) * 131 + m));
        rec.states.middleRows(static_cast<Eigen::Index>(m) * T, T) = traj.states.topRows(T);
        return_sum += traj.total_reward();
        sequence.observe_episode(traj, i);
      }
      rec.episode_return_learner = return_sum / M;

      SupervisorHandle sup = sequence.for_round(i);

      rec.labels_current.resize(rec.states.rows(), env.action_dim);
      auto t0 = std::chrono::steady_clock::now();
      for (Eigen::Index k = 0; k < rec.states.rows(); ++k)
        rec.labels_current.row(k) = label(sup, rec.states.row(k));
      auto t1 = std::chrono::steady_clock::now();
      rec.supervisor_query_us = detail::mean_us_per_call(t1 - t0, rec.states.rows());

      t0 = std::chrono::steady_clock::now();
      for (Eigen::Index k = 0; k < rec.states.rows(); ++k) {
        volatile double sink = act(params, rec.states.row(k)).sum();
        (void)sink;
      }
      t1 = std::chrono::steady_clock::now();
      rec.learner_query_us = detail::mean_us_per_call(t1 - t0, rec.states.rows());

      rec.loss_vs_current =
          empirical_loss(params, rec.states, rec.labels_current, cfg.player.alpha_reg);

      if (cfg.evaluate_supervisor_rollout) {
        auto sup_traj = rollout(
            env, [&](const Vector& s) { return label(sup, s); },
            hash_combine(seed, 0x5e7a1 + static_cast<std::uint64_t>(i)));
        rec.episode_return_supervisor = sup_traj.total_reward();
      }

      out.records.push_back(std::move(rec));
      params = update(cfg.player, out.records, params);
    } catch (const std::exception& e) {
      throw std::runtime_error("run_loop: round " + std::to_string(i) + ": " + e.what());
    }
  }

  out.final_params = params;
  out.final_supervisor = sequence.snapshot_final();
  for (auto& r : out.records) {
    r.labels_final.resize(r.states.rows(), env.action_dim);
    for (Eigen::Index k = 0; k < r.states.rows(); ++k)
      r.labels_final.row(k) = label(out.final_supervisor, r.states.row(k));
    PolicyParams played = initial_shape;
    played.theta = r.theta;
    r.loss_vs_final = empirical_loss(played, r.states, r.labels_final, cfg.player.alpha_reg);
    r.has_final_labels = true;
  }
  return out;
}

}  // namespace csil
