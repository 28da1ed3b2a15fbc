#include <catch2/catch_amalgamated.hpp>

#include "csil/policy.hpp"

using namespace csil;
using Catch::Approx;

namespace {

// independent two-loop evaluation of the affine policy
Eigen::VectorXd naive_linear_act(const PolicyParams& p, const Eigen::VectorXd& s) {
  const int A = p.action_dim, F = p.state_dim + 1;
  Eigen::VectorXd phi(F);
  for (int j = 0; j < p.state_dim; ++j)
    phi[j] = std::min(std::max(s[j], -p.feature_clip), p.feature_clip);
  phi[p.state_dim] = 1.0;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(A);
  for (int a = 0; a < A; ++a)
    for (int j = 0; j < F; ++j) out[a] += p.theta[a + A * j] * phi[j];
  return out;
}

Eigen::MatrixXd fd_jacobian(const PolicyParams& p, const Eigen::VectorXd& s, double h = 1e-5) {
  Eigen::MatrixXd J(p.action_dim, p.dim());
  PolicyParams plus = p, minus = p;
  for (int k = 0; k < p.dim(); ++k) {
    plus.theta = p.theta;
    minus.theta = p.theta;
    plus.theta[k] += h;
    minus.theta[k] -= h;
    J.col(k) = (act(plus, s) - act(minus, s)) / (2 * h);
  }
  return J;
}

bool entries_close(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double rel) {
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      double tol = rel * std::max({1.0, std::abs(a(i, j)), std::abs(b(i, j))});
      if (std::abs(a(i, j) - b(i, j)) > tol) return false;
    }
  return true;
}

double ridge_objective(const PolicyParams& p, const LabeledDataset& d, double alpha_reg) {
  double acc = 0.0;
  for (int k = 0; k < d.size(); ++k)
    acc += (act(p, d.states.row(k)) - d.labels.row(k).transpose()).squaredNorm();
  return acc / d.size() + alpha_reg * p.theta.squaredNorm();
}

LabeledDataset random_dataset(int n, int state_dim, int action_dim, std::uint64_t seed) {
  Rng rng(seed);
  LabeledDataset d;
  d.states.resize(n, state_dim);
  d.labels.resize(n, action_dim);
  for (int k = 0; k < n; ++k) {
    d.states.row(k) = rng.uniform_vector(state_dim, -2.0, 2.0);
    d.labels.row(k) = rng.uniform_vector(action_dim, -1.0, 1.0);
  }
  return d;
}

}  // namespace

TEST_CASE("act: zero parameters give the zero action") {
  for (auto kind : {0, 1}) {
    PolicyParams p = kind == 0 ? make_linear_policy(4, 2)
                               : make_mlp_policy(4, 2, 3, {8, 8});
    p.theta.setZero();
    Eigen::VectorXd s(4);
    s << 0.3, -0.9, 2.1, 0.0;
    REQUIRE(act(p, s).isZero(0.0));
  }
}

TEST_CASE("act: identity block reads out the first features") {
  PolicyParams p = make_linear_policy(4, 2);
  // W = [I_2 | 0]: W(a, j) = theta[a + 2*j]
  p.theta[0 + 2 * 0] = 1.0;
  p.theta[1 + 2 * 1] = 1.0;
  Eigen::VectorXd s(4);
  s << 0.7, -0.2, 5.0, 1.0;
  Eigen::VectorXd a = act(p, s);
  REQUIRE(a[0] == Approx(0.7));
  REQUIRE(a[1] == Approx(-0.2));
}

TEST_CASE("act: matches the naive dot-product oracle") {
  Rng rng(77);
  PolicyParams p = make_linear_policy(4, 2);
  for (int trial = 0; trial < 10; ++trial) {
    p.theta = rng.normal_vector(p.dim());
    Eigen::VectorXd s = rng.uniform_vector(4, -6.0, 6.0);  // exercises the clip
    REQUIRE((act(p, s) - naive_linear_act(p, s)).norm() < 1e-13);
  }
}

TEST_CASE("act_batch agrees with act") {
  for (auto kind : {0, 1}) {
    PolicyParams p = kind == 0 ? make_linear_policy(4, 2) : make_mlp_policy(4, 2, 2, {8});
    Rng rng(5);
    p.theta = rng.normal_vector(p.dim());
    p = project(std::move(p));
    Eigen::MatrixXd S(6, 4);
    for (int i = 0; i < 6; ++i) S.row(i) = rng.uniform_vector(4, -3.0, 3.0);
    Eigen::MatrixXd B = act_batch(p, S);
    for (int i = 0; i < 6; ++i)
      REQUIRE((B.row(i).transpose() - act(p, S.row(i))).norm() < 1e-12);
  }
}

TEST_CASE("policy_jacobian: linear operator norm equals the feature norm") {
  Rng rng(11);
  PolicyParams p = make_linear_policy(4, 2);
  for (int trial = 0; trial < 5; ++trial) {
    p.theta = rng.normal_vector(p.dim());
    Eigen::VectorXd s = rng.uniform_vector(4, -5.0, 5.0);
    Eigen::MatrixXd J = policy_jacobian(p, s);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(J);  // singular-value oracle
    double phi_norm = features(p, s).norm();
    REQUIRE(svd.singularValues()[0] == Approx(phi_norm).epsilon(1e-10));
    REQUIRE(jacobian_operator_norm(p, s) == Approx(phi_norm).epsilon(1e-10));
  }
}

TEST_CASE("policy_jacobian: matches central finite differences for both kinds") {
  Rng rng(13);
  for (auto kind : {0, 1}) {
    PolicyParams p = kind == 0 ? make_linear_policy(4, 2)
                               : make_mlp_policy(4, 2, 2, {8, 8}, Activation::Swish, 4.0, 50.0, 3);
    p.theta = 0.5 * rng.normal_vector(p.dim());
    for (int trial = 0; trial < 3; ++trial) {
      Eigen::VectorXd s = rng.uniform_vector(4, -2.0, 2.0);
      REQUIRE(entries_close(policy_jacobian(p, s), fd_jacobian(p, s), 1e-5));
    }
  }
}

TEST_CASE("policy_jacobian: bounded by the stored constant at clipped states") {
  PolicyParams p = make_linear_policy(4, 2);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(4);
  REQUIRE(jacobian_operator_norm(p, s) <= p.jacobian_bound);
  s << 100.0, -100.0, 100.0, -100.0;  // saturates the feature clip
  REQUIRE(jacobian_operator_norm(p, s) == Approx(p.jacobian_bound).epsilon(1e-12));
}

TEST_CASE("fit_ridge: zero labels give zero parameters") {
  LabeledDataset d = random_dataset(20, 4, 2, 1);
  d.labels.setZero();
  PolicyParams fit = fit_ridge(d, 1.0, make_linear_policy(4, 2));
  REQUIRE(fit.theta.norm() < 1e-12);
}

TEST_CASE("fit_ridge: shrinkage is monotone in the regularizer") {
  LabeledDataset d = random_dataset(1, 4, 2, 2);
  PolicyParams shape = make_linear_policy(4, 2);
  double prev = std::numeric_limits<double>::infinity();
  for (double reg : {0.1, 1.0, 10.0, 100.0, 1000.0}) {
    double norm = fit_ridge(d, reg, shape).theta.norm();
    REQUIRE(norm < prev);
    prev = norm;
  }
  REQUIRE(prev < 1e-2);  // theta -> 0 as the regularizer dominates
}

TEST_CASE("fit_ridge: first-order optimality and perturbation oracle") {
  LabeledDataset d = random_dataset(50, 4, 2, 3);
  PolicyParams shape = make_linear_policy(4, 2);
  PolicyParams fit = fit_ridge(d, 1.0, shape);

  // analytic gradient of the objective, assembled independently
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(fit.dim());
  for (int k = 0; k < d.size(); ++k) {
    Eigen::VectorXd r = act(fit, d.states.row(k)) - d.labels.row(k).transpose();
    accumulate_jacobian_transpose(fit, d.states.row(k), 2.0 * r / d.size(), grad);
  }
  grad += 2.0 * fit.theta;
  REQUIRE(grad.norm() < 1e-8);

  Rng rng(4);
  const double obj = ridge_objective(fit, d, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    PolicyParams perturbed = fit;
    perturbed.theta += 0.1 * rng.normal_vector(fit.dim());
    REQUIRE(obj <= ridge_objective(perturbed, d, 1.0) + 1e-12);
  }
}

TEST_CASE("fit_ridge: rejects empty and non-finite data") {
  PolicyParams shape = make_linear_policy(4, 2);
  LabeledDataset empty;
  empty.states.resize(0, 4);
  empty.labels.resize(0, 2);
  REQUIRE_THROWS_AS(fit_ridge(empty, 1.0, shape), std::invalid_argument);
  LabeledDataset bad = random_dataset(3, 4, 2, 9);
  bad.labels(1, 0) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(fit_ridge(bad, 1.0, shape), std::invalid_argument);
}

TEST_CASE("fit_mlp: drives the loss down on constant labels") {
  LabeledDataset d = random_dataset(64, 4, 2, 5);
  for (int k = 0; k < d.size(); ++k) d.labels.row(k) << 0.4, -0.3;
  PolicyParams shape = make_mlp_policy(4, 2, 2, {8, 8});
  FitMlpConfig cfg;
  cfg.epochs = 300;
  cfg.seed = 7;
  auto res = fit_mlp(d, cfg, shape);
  REQUIRE_FALSE(res.diverged);
  REQUIRE(res.member_losses.maxCoeff() < 1e-3);
}

TEST_CASE("fit_mlp: epochs=0 returns the seeded initialization unchanged") {
  LabeledDataset d = random_dataset(16, 4, 2, 6);
  PolicyParams shape = make_mlp_policy(4, 2, 2, {8});
  FitMlpConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 21;
  auto res = fit_mlp(d, cfg, shape);
  PolicyParams init = make_mlp_policy(4, 2, 2, {8}, Activation::Swish, 4.0, 50.0, 21);
  REQUIRE(res.params.theta == init.theta);
}

TEST_CASE("fit_mlp: deterministic given the seed") {
  LabeledDataset d = random_dataset(40, 4, 2, 8);
  PolicyParams shape = make_mlp_policy(4, 2, 2, {8});
  FitMlpConfig cfg;
  cfg.epochs = 50;
  cfg.seed = 99;
  auto a = fit_mlp(d, cfg, shape);
  auto b = fit_mlp(d, cfg, shape);
  REQUIRE(a.params.theta == b.params.theta);
  REQUIRE(a.member_losses == b.member_losses);
}

TEST_CASE("project: interior unchanged, exterior rescaled, idempotent") {
  PolicyParams p = make_linear_policy(4, 2);
  Rng rng(17);
  p.theta = rng.normal_vector(p.dim());
  p.theta *= (p.projection_radius / 2) / p.theta.norm();
  REQUIRE(project(p).theta == p.theta);

  PolicyParams q = p;
  q.theta *= 4.0;  // norm = 2R
  PolicyParams qp = project(q);
  REQUIRE(qp.theta.norm() == Approx(q.projection_radius).epsilon(1e-12));
  REQUIRE((qp.theta / qp.theta.norm() - q.theta / q.theta.norm()).norm() < 1e-12);

  for (int trial = 0; trial < 20; ++trial) {
    PolicyParams r = p;
    r.theta = 60.0 * rng.normal_vector(p.dim());
    PolicyParams once = project(r);
    PolicyParams twice = project(once);
    REQUIRE((once.theta - twice.theta).norm() <= 1e-13 * p.projection_radius);
  }
}

TEST_CASE("property: act is linear in theta for the affine family") {
  Rng rng(23);
  PolicyParams p1 = make_linear_policy(4, 2);
  PolicyParams p2 = p1, pc = p1;
  for (int trial = 0; trial < 20; ++trial) {
    p1.theta = rng.normal_vector(p1.dim());
    p2.theta = rng.normal_vector(p1.dim());
    double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    pc.theta = a * p1.theta + b * p2.theta;
    Eigen::VectorXd s = rng.uniform_vector(4, -3, 3);
    REQUIRE((act(pc, s) - a * act(p1, s) - b * act(p2, s)).norm() < 1e-12);
  }
}

TEST_CASE("property: jacobian operator norm stays under the bound in distribution") {
  PolicyParams lin = make_linear_policy(4, 2);
  Rng rng(31);
  for (int i = 0; i < 10000; ++i) {
    Eigen::VectorXd s = rng.uniform_vector(4, -8.0, 8.0);
    REQUIRE(jacobian_operator_norm(lin, s) <= lin.jacobian_bound + 1e-12);
  }

  LabeledDataset d = random_dataset(60, 4, 2, 12);
  FitMlpConfig cfg;
  cfg.epochs = 60;
  cfg.seed = 3;
  auto fit = fit_mlp(d, cfg, make_mlp_policy(4, 2, 2, {8}));
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd s = rng.uniform_vector(4, -2.0, 2.0);
    REQUIRE(jacobian_operator_norm(fit.params, s) <= fit.params.jacobian_bound);
  }
}

TEST_CASE("property: fits always land inside the parameter ball") {
  Rng rng(41);
  PolicyParams shape = make_linear_policy(4, 2, 4.0, 0.5);  // tiny ball forces projection
  LabeledDataset d = random_dataset(30, 4, 2, 13);
  PolicyParams fit = fit_ridge(d, 0.01, shape);
  REQUIRE(fit.theta.norm() <= shape.projection_radius + 1e-12);
}
