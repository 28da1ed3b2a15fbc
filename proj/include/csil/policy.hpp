#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "csil/mlp.hpp"
#include "csil/rng.hpp"

namespace csil {

// Deterministic learner policies on a flat parameter vector theta constrained
// to the l2 ball of radius projection_radius. Two families:
//
//   LinearAffine: pi(s) = W * phi(s), phi(s) = [clamp(s, +-feature_clip); 1],
//                 theta = vec(W) column-major, W is action_dim x (state_dim+1).
//   MlpEnsemble:  mean of E feed-forward members on the clamped state;
//                 theta is the concatenation of the member parameter vectors.
//
// Clamping the inputs keeps the Jacobian operator norm finite: for the linear
// family ||J(s)|| = ||phi(s)|| <= sqrt(state_dim*clip^2 + 1), which is the
// stored jacobian_bound. For ensembles the bound is measured and margined
// after each fit. Outputs are never clipped here; the environment clips.

enum class PolicyKind { LinearAffine, MlpEnsemble };

struct PolicyParams {
  PolicyKind kind = PolicyKind::LinearAffine;
  Eigen::VectorXd theta;
  int state_dim = 0;
  int action_dim = 0;
  double feature_clip = 4.0;
  double projection_radius = 50.0;  // radius of the parameter ball
  double jacobian_bound = 0.0;

  // MlpEnsemble only
  int ensemble_size = 0;
  MlpSpec member;

  int dim() const { return static_cast<int>(theta.size()); }
  int feature_dim() const { return state_dim + 1; }
};

struct LabeledDataset {
  Eigen::MatrixXd states;  // n x state_dim
  Eigen::MatrixXd labels;  // n x action_dim
  Eigen::VectorXd weights;  // empty = uniform

  int size() const { return static_cast<int>(states.rows()); }

  void validate() const {
    if (states.rows() != labels.rows())
      throw std::invalid_argument("LabeledDataset: states/labels length mismatch");
    if (!states.allFinite() || !labels.allFinite())
      throw std::invalid_argument("LabeledDataset: non-finite entries");
    if (weights.size() != 0 && weights.size() != states.rows())
      throw std::invalid_argument("LabeledDataset: weights length mismatch");
  }
};

inline PolicyParams make_linear_policy(int state_dim, int action_dim, double feature_clip = 4.0,
                                       double projection_radius = 50.0) {
  PolicyParams p;
  p.kind = PolicyKind::LinearAffine;
  p.state_dim = state_dim;
  p.action_dim = action_dim;
  p.feature_clip = feature_clip;
  p.projection_radius = projection_radius;
  p.theta = Eigen::VectorXd::Zero(action_dim * (state_dim + 1));
  p.jacobian_bound = std::sqrt(state_dim * feature_clip * feature_clip + 1.0);
  return p;
}

inline PolicyParams make_mlp_policy(int state_dim, int action_dim, int ensemble_size = 5,
                                    std::vector<int> hidden = {20, 20},
                                    Activation activation = Activation::Swish,
                                    double feature_clip = 4.0, double projection_radius = 50.0,
                                    std::uint64_t seed = 0) {
  PolicyParams p;
  p.kind = PolicyKind::MlpEnsemble;
  p.state_dim = state_dim;
  p.action_dim = action_dim;
  p.feature_clip = feature_clip;
  p.projection_radius = projection_radius;
  p.ensemble_size = ensemble_size;
  p.member.input = state_dim;
  p.member.output = action_dim;
  p.member.hidden = std::move(hidden);
  p.member.activation = activation;
  const int d = p.member.param_count();
  p.theta.resize(static_cast<Eigen::Index>(d) * ensemble_size);
  for (int e = 0; e < ensemble_size; ++e)
    p.theta.segment(static_cast<Eigen::Index>(e) * d, d) =
        mlp_init(p.member, hash_combine(seed, 0xe0 + e), /*zero_output_layer=*/true);
  return p;
}

inline Eigen::VectorXd clip_features_input(const PolicyParams& p, const Eigen::VectorXd& s) {
  return s.cwiseMax(-p.feature_clip).cwiseMin(p.feature_clip);
}

inline Eigen::VectorXd features(const PolicyParams& p, const Eigen::VectorXd& s) {
  Eigen::VectorXd phi(p.feature_dim());
  phi.head(p.state_dim) = clip_features_input(p, s);
  phi[p.state_dim] = 1.0;
  return phi;
}

inline Eigen::MatrixXd features_batch(const PolicyParams& p, const Eigen::MatrixXd& S) {
  Eigen::MatrixXd Phi(S.rows(), p.feature_dim());
  Phi.leftCols(p.state_dim) =
      S.cwiseMax(-p.feature_clip).cwiseMin(p.feature_clip);
  Phi.col(p.state_dim).setOnes();
  return Phi;
}

namespace detail {
inline Eigen::Map<const Eigen::MatrixXd> linear_weight(const PolicyParams& p) {
  return {p.theta.data(), p.action_dim, p.feature_dim()};
}
inline Eigen::Map<const Eigen::VectorXd> member_params(const PolicyParams& p, int e) {
  const int d = p.member.param_count();
  return {p.theta.data() + static_cast<Eigen::Index>(e) * d, d};
}
}  // namespace detail

inline Eigen::VectorXd act(const PolicyParams& p, const Eigen::VectorXd& s) {
  if (s.size() != p.state_dim) throw std::invalid_argument("act: state dimension mismatch");
  if (!s.allFinite()) throw std::invalid_argument("act: non-finite state");
  if (p.kind == PolicyKind::LinearAffine) return detail::linear_weight(p) * features(p, s);
  Eigen::VectorXd x = clip_features_input(p, s);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(p.action_dim);
  for (int e = 0; e < p.ensemble_size; ++e)
    out += mlp_forward(p.member, detail::member_params(p, e), x);
  return out / p.ensemble_size;
}

inline Eigen::MatrixXd act_batch(const PolicyParams& p, const Eigen::MatrixXd& S) {
  if (S.cols() != p.state_dim) throw std::invalid_argument("act_batch: state dimension mismatch");
  if (p.kind == PolicyKind::LinearAffine)
    return features_batch(p, S) * detail::linear_weight(p).transpose();
  Eigen::MatrixXd X = S.cwiseMax(-p.feature_clip).cwiseMin(p.feature_clip);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(S.rows(), p.action_dim);
  for (int e = 0; e < p.ensemble_size; ++e)
    out += mlp_forward_batch(p.member, detail::member_params(p, e), X);
  return out / p.ensemble_size;
}

// Exact Jacobian of act with respect to theta, action_dim x dim().
inline Eigen::MatrixXd policy_jacobian(const PolicyParams& p, const Eigen::VectorXd& s) {
  if (s.size() != p.state_dim)
    throw std::invalid_argument("policy_jacobian: state dimension mismatch");
  if (p.kind == PolicyKind::LinearAffine) {
    const Eigen::VectorXd phi = features(p, s);
    const int A = p.action_dim;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(A, p.dim());
    for (int j = 0; j < p.feature_dim(); ++j)
      for (int a = 0; a < A; ++a) J(a, a + A * j) = phi[j];
    return J;
  }
  const Eigen::VectorXd x = clip_features_input(p, s);
  const int d = p.member.param_count();
  Eigen::MatrixXd J(p.action_dim, p.dim());
  for (int e = 0; e < p.ensemble_size; ++e)
    J.middleCols(static_cast<Eigen::Index>(e) * d, d) =
        mlp_param_jacobian(p.member, detail::member_params(p, e), x) / p.ensemble_size;
  return J;
}

// Accumulates J(s)^T r without forming the Jacobian; used by loss gradients.
inline void accumulate_jacobian_transpose(const PolicyParams& p, const Eigen::VectorXd& s,
                                          const Eigen::VectorXd& r, Eigen::VectorXd& out) {
  if (p.kind == PolicyKind::LinearAffine) {
    const Eigen::VectorXd phi = features(p, s);
    const int A = p.action_dim;
    for (int j = 0; j < p.feature_dim(); ++j)
      for (int a = 0; a < A; ++a) out[a + A * j] += r[a] * phi[j];
    return;
  }
  const Eigen::VectorXd x = clip_features_input(p, s);
  const int d = p.member.param_count();
  for (int e = 0; e < p.ensemble_size; ++e)
    out.segment(static_cast<Eigen::Index>(e) * d, d) +=
        mlp_backprop_batch(p.member, detail::member_params(p, e), x.transpose(),
                           (r / p.ensemble_size).transpose());
}

inline double jacobian_operator_norm(const PolicyParams& p, const Eigen::VectorXd& s) {
  Eigen::MatrixXd J = policy_jacobian(p, s);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J * J.transpose());
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

// Euclidean projection onto the parameter ball.
inline PolicyParams project(PolicyParams p) {
  const double norm = p.theta.norm();
  if (norm > p.projection_radius && norm > 0.0)
    p.theta *= p.projection_radius / norm;
  return p;
}

// Unique minimizer of the weighted ridge objective
//   (1/W) sum_k w_k ||W phi(s_k) - y_k||^2 + alpha_reg ||theta||^2
// by the normal equations, then projected onto the parameter ball.
inline PolicyParams fit_ridge(const LabeledDataset& data, double alpha_reg,
                              const PolicyParams& shape) {
  data.validate();
  if (data.size() == 0) throw std::invalid_argument("fit_ridge: empty dataset");
  if (shape.kind != PolicyKind::LinearAffine)
    throw std::invalid_argument("fit_ridge: requires a LinearAffine policy");
  if (!(alpha_reg > 0)) throw std::invalid_argument("fit_ridge: alpha_reg must be positive");

  const Eigen::MatrixXd Phi = features_batch(shape, data.states);
  const int F = shape.feature_dim();
  Eigen::MatrixXd gram;   // (1/W) Phi^T diag(w) Phi
  Eigen::MatrixXd cross;  // (1/W) Phi^T diag(w) Y
  if (data.weights.size() == 0) {
    const double n = data.size();
    gram = Phi.transpose() * Phi / n;
    cross = Phi.transpose() * data.labels / n;
  } else {
    const double W = data.weights.sum();
    if (!(W > 0)) throw std::invalid_argument("fit_ridge: weights must have positive mass");
    Eigen::MatrixXd PhiW = data.weights.asDiagonal() * Phi;
    gram = Phi.transpose() * PhiW / W;  // symmetric since diag(w) commutes
    gram = (gram + gram.transpose()) / 2.0;
    cross = PhiW.transpose() * data.labels / W;
  }
  gram += alpha_reg * Eigen::MatrixXd::Identity(F, F);

  Eigen::MatrixXd X = gram.ldlt().solve(cross);  // F x action_dim
  Eigen::MatrixXd W = X.transpose();             // action_dim x F
  PolicyParams out = shape;
  out.theta = Eigen::Map<const Eigen::VectorXd>(W.data(), W.size());
  return project(std::move(out));
}

struct FitMlpResult {
  PolicyParams params;
  Eigen::VectorXd member_losses;
  bool diverged = false;
};

struct FitMlpConfig {
  int epochs = 300;
  double step_size = 0.05;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double jacobian_margin = 1.5;
};

inline double measure_jacobian_bound(const PolicyParams& p, const Eigen::MatrixXd& states,
                                     double margin) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < states.rows(); ++i)
    worst = std::max(worst, jacobian_operator_norm(p, states.row(i)));
  return worst * margin;
}

// Each member is trained independently on the full dataset from its own seed;
// the ensemble mean is the policy. Deterministic given cfg.seed.
inline FitMlpResult fit_mlp(const LabeledDataset& data, const FitMlpConfig& cfg,
                            const PolicyParams& shape) {
  data.validate();
  if (data.size() == 0) throw std::invalid_argument("fit_mlp: empty dataset");
  if (shape.kind != PolicyKind::MlpEnsemble)
    throw std::invalid_argument("fit_mlp: requires an MlpEnsemble policy");

  FitMlpResult result;
  result.params = make_mlp_policy(shape.state_dim, shape.action_dim, shape.ensemble_size,
                                  shape.member.hidden, shape.member.activation,
                                  shape.feature_clip, shape.projection_radius, cfg.seed);
  const Eigen::MatrixXd X =
      data.states.cwiseMax(-shape.feature_clip).cwiseMin(shape.feature_clip);
  const int d = result.params.member.param_count();
  result.member_losses.resize(shape.ensemble_size);
  for (int e = 0; e < shape.ensemble_size; ++e) {
    Eigen::VectorXd member = result.params.theta.segment(static_cast<Eigen::Index>(e) * d, d);
    MlpTrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.step_size = cfg.step_size;
    tc.batch_size = cfg.batch_size;
    tc.optimizer = Optimizer::Sgd;
    tc.seed = hash_combine(cfg.seed, 0xf17 + e);
    auto tr = mlp_train(result.params.member, member, X, data.labels, tc);
    result.member_losses[e] = tr.final_loss;
    result.diverged = result.diverged || tr.diverged;
    if (!tr.diverged) result.params.theta.segment(static_cast<Eigen::Index>(e) * d, d) = member;
  }
  result.params = project(std::move(result.params));
  result.params.jacobian_bound =
      measure_jacobian_bound(result.params, data.states, cfg.jacobian_margin);
  return result;
}

}  // namespace csil
