#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "csil/imitation.hpp"

namespace csil {

// Regret accounting over a finished run. Four cumulative quantities are
// tracked per prefix length: static and dynamic regret, each against labels
// from the round supervisors (sequence) and from the final supervisor. The
// reduction inequality
//   regret_final <= regret_sequence + 4*delta*sum_i mean_t||y_final - y_seq||
// is evaluated pathwise on the recorded states; its slack must never go
// negative beyond float accumulation.
//
// Everything here is specific to the linear-affine policy family, whose
// comparators have closed-form ridge solutions. Per-round losses reduce to
// moment matrices, so prefix sweeps cost O(1) per prefix and both label
// sources flow through the identical arithmetic (equal labels give exactly
// equal regrets, not approximately equal ones).

enum class LabelSource { Sequence, Final };

enum class ComparatorKind { StaticSeq, StaticFinal, DynamicSeq, DynamicFinal };

struct Comparator {
  ComparatorKind kind = ComparatorKind::StaticSeq;
  PolicyParams params;
  double objective = 0.0;  // value of the defining objective at params
};

struct SublinearityStats {
  double loglog_slope = 0.0;  // -inf when the fitted tail is identically zero
  double avg_ratio = 0.0;     // (R_N/N) / (R_{N/10}/(N/10))
};

struct PredictabilityReport {
  double beta_hat = std::numeric_limits<double>::quiet_NaN();
  bool beta_defined = false;
  Eigen::VectorXd gradient_gaps;  // g_i = mean_probe ||grad l_{i+1} - grad l_i||
  Eigen::VectorXd param_steps;    // ||theta_{i+1} - theta_i||
  Eigen::VectorXd zeta;           // regression residuals
  Eigen::VectorXd cesaro;         // running means of zeta
  double cesaro_ratio = std::numeric_limits<double>::quiet_NaN();
  double alpha = 0.0;
  bool alpha_exceeds_beta = false;
};

struct RegretReport {
  // one entry per prefix length 1..N
  Eigen::VectorXd static_seq;    // fixed full-horizon comparator
  Eigen::VectorXd static_final;  // fixed full-horizon comparator
  Eigen::VectorXd static_seq_prefix;    // comparator re-solved per prefix
  Eigen::VectorXd static_final_prefix;  // comparator re-solved per prefix
  Eigen::VectorXd dynamic_seq;
  Eigen::VectorXd dynamic_final;
  Eigen::VectorXd extra_term;
  Eigen::VectorXd bound_slack_static;   // prefix-instantiated reduction slack
  Eigen::VectorXd bound_slack_dynamic;
  double action_diam = 0.0;
  double alpha_reg = 0.0;
  SublinearityStats sub_static_final;
  SublinearityStats sub_dynamic_final;
  SublinearityStats sub_extra_term;
  PredictabilityReport predictability;
};

namespace detail {

struct RoundMoments {
  Matrix gram;        // (1/n) Phi^T Phi
  Matrix cross_seq;   // (1/n) Phi^T Y_seq
  Matrix cross_fin;   // (1/n) Phi^T Y_fin
  double energy_seq = 0.0;  // (1/n) ||Y_seq||^2
  double energy_fin = 0.0;
  double displacement = 0.0;  // (1/n) sum_k ||y_fin - y_seq||
  Matrix played;              // the played parameters as an A x F matrix
  Eigen::VectorXd theta;
};

inline Matrix as_weight_matrix(const Eigen::VectorXd& theta, int action_dim, int feature_dim) {
  return Eigen::Map<const Matrix>(theta.data(), action_dim, feature_dim);
}

}  // namespace detail

class RegretAnalyzer {
 public:
  RegretAnalyzer(const std::vector<RoundRecord>& records, const PolicyParams& shape,
                 double alpha_reg, double action_diam)
      : shape_(shape), alpha_reg_(alpha_reg), action_diam_(action_diam) {
    if (shape.kind != PolicyKind::LinearAffine)
      throw std::invalid_argument("regret analysis requires the linear-affine policy family");
    if (records.empty()) throw std::invalid_argument("regret analysis: no rounds recorded");
    if (!(alpha_reg > 0)) throw std::invalid_argument("regret analysis: alpha_reg must be > 0");
    const int A = shape.action_dim, F = shape.feature_dim();
    rounds_.reserve(records.size());
    for (const auto& rec : records) {
      if (!rec.has_final_labels)
        throw std::logic_error(
            "regret analysis: labels from the final supervisor are missing; "
            "snapshot the final supervisor and backfill labels first");
      if (rec.states.rows() == 0) throw std::invalid_argument("regret analysis: empty round");
      detail::RoundMoments m;
      const Matrix Phi = features_batch(shape, rec.states);
      const double n = static_cast<double>(rec.states.rows());
      m.gram = Phi.transpose() * Phi / n;
      m.cross_seq = Phi.transpose() * rec.labels_current / n;
      m.cross_fin = Phi.transpose() * rec.labels_final / n;
      m.energy_seq = rec.labels_current.squaredNorm() / n;
      m.energy_fin = rec.labels_final.squaredNorm() / n;
      m.displacement = (rec.labels_final - rec.labels_current).rowwise().norm().sum() / n;
      m.theta = rec.theta;
      m.played = detail::as_weight_matrix(rec.theta, A, F);
      rounds_.push_back(std::move(m));
    }
  }

  int rounds() const { return static_cast<int>(rounds_.size()); }

  // l_i(theta, source) via the stored moments.
  double loss(int i, const Matrix& W, LabelSource src) const {
    const auto& m = rounds_.at(i);
    const Matrix& cross = src == LabelSource::Sequence ? m.cross_seq : m.cross_fin;
    const double energy = src == LabelSource::Sequence ? m.energy_seq : m.energy_fin;
    return (W * m.gram).cwiseProduct(W).sum() - 2.0 * W.cwiseProduct(cross.transpose()).sum() +
           energy + alpha_reg_ * W.squaredNorm();
  }

  // Ridge argmin of the mean loss over rounds [first, last], projected.
  PolicyParams solve_over(int first, int last, LabelSource src) const {
    const int F = shape_.feature_dim();
    Matrix gram = Matrix::Zero(F, F);
    Matrix cross = Matrix::Zero(F, shape_.action_dim);
    for (int i = first; i <= last; ++i) {
      gram += rounds_[i].gram;
      cross += src == LabelSource::Sequence ? rounds_[i].cross_seq : rounds_[i].cross_fin;
    }
    const double count = last - first + 1;
    gram = gram / count + alpha_reg_ * Matrix::Identity(F, F);
    Matrix W = Matrix(gram.ldlt().solve(cross / count)).transpose();
    PolicyParams out = shape_;
    out.theta = Eigen::Map<const Eigen::VectorXd>(W.data(), W.size());
    return project(std::move(out));
  }

  double objective_over(int first, int last, const PolicyParams& p, LabelSource src) const {
    const Matrix W = detail::as_weight_matrix(p.theta, shape_.action_dim, shape_.feature_dim());
    double total = 0.0;
    for (int i = first; i <= last; ++i) total += loss(i, W, src);
    return total;
  }

  // Cumulative loss-gap series against one fixed comparator.
  Eigen::VectorXd regret_series_fixed(const PolicyParams& comparator, LabelSource src) const {
    const Matrix Wc =
        detail::as_weight_matrix(comparator.theta, shape_.action_dim, shape_.feature_dim());
    Eigen::VectorXd out(rounds());
    double acc = 0.0;
    for (int i = 0; i < rounds(); ++i) {
      acc += loss(i, rounds_[i].played, src) - loss(i, Wc, src);
      out[i] = acc;
    }
    return out;
  }

  // Static series with the comparator re-solved for every prefix.
  Eigen::VectorXd regret_series_prefix(LabelSource src) const {
    Eigen::VectorXd out(rounds());
    Eigen::VectorXd played_acc(rounds());
    double acc = 0.0;
    for (int i = 0; i < rounds(); ++i) {
      acc += loss(i, rounds_[i].played, src);
      played_acc[i] = acc;
    }
    for (int p = 0; p < rounds(); ++p) {
      PolicyParams comp = solve_over(0, p, src);
      out[p] = played_acc[p] - objective_over(0, p, comp, src);
    }
    return out;
  }

  // Dynamic series: per-round comparators.
  Eigen::VectorXd dynamic_series(LabelSource src) const {
    Eigen::VectorXd out(rounds());
    double acc = 0.0;
    for (int i = 0; i < rounds(); ++i) {
      PolicyParams comp = solve_over(i, i, src);
      const Matrix Wc =
          detail::as_weight_matrix(comp.theta, shape_.action_dim, shape_.feature_dim());
      acc += loss(i, rounds_[i].played, src) - loss(i, Wc, src);
      out[i] = acc;
    }
    return out;
  }

  // 4 * delta * cumulative mean label displacement.
  Eigen::VectorXd extra_term_series() const {
    Eigen::VectorXd out(rounds());
    double acc = 0.0;
    for (int i = 0; i < rounds(); ++i) {
      acc += 4.0 * action_diam_ * rounds_[i].displacement;
      out[i] = acc;
    }
    return out;
  }

  const PolicyParams& shape() const { return shape_; }
  double alpha_reg() const { return alpha_reg_; }
  double action_diam() const { return action_diam_; }
  double displacement(int i) const { return rounds_.at(i).displacement; }

 private:
  PolicyParams shape_;
  double alpha_reg_ = 0.0;
  double action_diam_ = 0.0;
  std::vector<detail::RoundMoments> rounds_;
};

// argmin of the kind's defining objective. Dynamic kinds take the 0-based
// round; static kinds solve over the whole horizon.
inline Comparator solve_comparator(ComparatorKind kind, const std::vector<RoundRecord>& records,
                                   const PolicyParams& shape, double alpha_reg, int round = 0) {
  RegretAnalyzer an(records, shape, alpha_reg, 0.0);
  Comparator out;
  out.kind = kind;
  const bool dynamic = kind == ComparatorKind::DynamicSeq || kind == ComparatorKind::DynamicFinal;
  const LabelSource src =
      (kind == ComparatorKind::StaticSeq || kind == ComparatorKind::DynamicSeq)
          ? LabelSource::Sequence
          : LabelSource::Final;
  const int first = dynamic ? round : 0;
  const int last = dynamic ? round : an.rounds() - 1;
  out.params = an.solve_over(first, last, src);
  out.objective = an.objective_over(first, last, out.params, src);
  return out;
}

inline Eigen::VectorXd static_regret(const std::vector<RoundRecord>& records,
                                     const PolicyParams& shape, double alpha_reg, LabelSource src,
                                     bool prefix_comparators = false) {
  RegretAnalyzer an(records, shape, alpha_reg, 0.0);
  if (prefix_comparators) return an.regret_series_prefix(src);
  return an.regret_series_fixed(an.solve_over(0, an.rounds() - 1, src), src);
}

inline Eigen::VectorXd dynamic_regret(const std::vector<RoundRecord>& records,
                                      const PolicyParams& shape, double alpha_reg,
                                      LabelSource src) {
  return RegretAnalyzer(records, shape, alpha_reg, 0.0).dynamic_series(src);
}

struct ReductionCheck {
  Eigen::VectorXd extra_term;
  Eigen::VectorXd bound_slack_static;
  Eigen::VectorXd bound_slack_dynamic;
};

// Evaluates both sides of the reduction at every prefix length, with the
// static comparators re-solved per prefix (each prefix is its own horizon,
// which is what makes the inequality hold pathwise).
inline ReductionCheck verify_reduction(const std::vector<RoundRecord>& records,
                                       const PolicyParams& shape, double alpha_reg,
                                       double action_diam) {
  RegretAnalyzer an(records, shape, alpha_reg, action_diam);
  ReductionCheck out;
  out.extra_term = an.extra_term_series();
  Eigen::VectorXd sseq = an.regret_series_prefix(LabelSource::Sequence);
  Eigen::VectorXd sfin = an.regret_series_prefix(LabelSource::Final);
  Eigen::VectorXd dseq = an.dynamic_series(LabelSource::Sequence);
  Eigen::VectorXd dfin = an.dynamic_series(LabelSource::Final);
  out.bound_slack_static = sseq + out.extra_term - sfin;
  out.bound_slack_dynamic = dseq + out.extra_term - dfin;
  return out;
}

// Log-log growth diagnostics over the last half of the series.
inline SublinearityStats sublinearity_stats(const Eigen::VectorXd& series) {
  const int n = static_cast<int>(series.size());
  if (n < 20) throw std::invalid_argument("sublinearity_stats: need at least 20 prefixes");
  const double eps = 1e-12;

  SublinearityStats out;
  const int first = n / 2;  // prefix lengths first+1 .. n
  bool any_positive = false;
  for (int i = first; i < n; ++i) any_positive = any_positive || series[i] > eps;
  if (!any_positive) {
    out.loglog_slope = -std::numeric_limits<double>::infinity();
  } else {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int m = n - first;
    for (int i = first; i < n; ++i) {
      const double x = std::log(static_cast<double>(i + 1));
      const double y = std::log(std::max(series[i], eps));
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    out.loglog_slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  }

  const int tenth = std::max(1, n / 10);
  const double early = series[tenth - 1] / tenth;
  const double late = series[n - 1] / n;
  if (early == 0.0)
    out.avg_ratio = late == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  else
    out.avg_ratio = late / early;
  return out;
}

// Measures round-to-round loss-gradient variation at shared probe parameters,
// regresses it on the played parameter steps (through the origin), and checks
// that the residual running mean dies out.
inline PredictabilityReport predictability_diagnostic(const std::vector<RoundRecord>& records,
                                                      const PolicyParams& shape, double alpha_reg,
                                                      int extra_probes = 4) {
  if (records.size() < 10)
    throw std::invalid_argument("predictability_diagnostic: need at least 10 rounds");
  std::vector<PolicyParams> probes;
  PolicyParams zero = shape;
  zero.theta.setZero();
  probes.push_back(zero);
  Rng rng(0x9b0be5);
  for (int k = 0; k < extra_probes; ++k) {
    PolicyParams p = shape;
    p.theta = rng.normal_vector(shape.dim());
    p.theta *= (shape.projection_radius / 4.0) / std::max(p.theta.norm(), 1e-12);
    probes.push_back(std::move(p));
  }

  const int pairs = static_cast<int>(records.size()) - 1;
  PredictabilityReport rep;
  rep.alpha = 2.0 * alpha_reg;
  rep.gradient_gaps.resize(pairs);
  rep.param_steps.resize(pairs);
  for (int i = 0; i < pairs; ++i) {
    double gap = 0.0;
    for (const auto& p : probes) {
      Eigen::VectorXd g_next = loss_gradient(p, records[i + 1].states,
                                             records[i + 1].labels_current, alpha_reg);
      Eigen::VectorXd g_here =
          loss_gradient(p, records[i].states, records[i].labels_current, alpha_reg);
      gap += (g_next - g_here).norm();
    }
    rep.gradient_gaps[i] = gap / probes.size();
    rep.param_steps[i] = (records[i + 1].theta - records[i].theta).norm();
  }

  const double sxx = rep.param_steps.squaredNorm();
  if (sxx < 1e-20) {
    rep.beta_defined = false;  // all parameter steps vanished; slope is undetermined
    rep.zeta = rep.gradient_gaps;
  } else {
    rep.beta_hat = rep.gradient_gaps.dot(rep.param_steps) / sxx;
    rep.beta_defined = true;
    rep.zeta = rep.gradient_gaps - rep.beta_hat * rep.param_steps;
  }

  rep.cesaro.resize(pairs);
  double acc = 0.0;
  for (int i = 0; i < pairs; ++i) {
    acc += rep.zeta[i];
    rep.cesaro[i] = acc / (i + 1);
  }
  if (pairs >= 20 && std::abs(rep.cesaro[19]) > 1e-15)
    rep.cesaro_ratio = std::abs(rep.cesaro[pairs - 1]) / std::abs(rep.cesaro[19]);
  rep.alpha_exceeds_beta = rep.beta_defined && rep.alpha > rep.beta_hat;
  return rep;
}

inline RegretReport compute_regret_report(const std::vector<RoundRecord>& records,
                                          const PolicyParams& shape, double alpha_reg,
                                          double action_diam) {
  RegretAnalyzer an(records, shape, alpha_reg, action_diam);
  RegretReport rep;
  rep.action_diam = action_diam;
  rep.alpha_reg = alpha_reg;
  rep.static_seq =
      an.regret_series_fixed(an.solve_over(0, an.rounds() - 1, LabelSource::Sequence),
                             LabelSource::Sequence);
  rep.static_final = an.regret_series_fixed(
      an.solve_over(0, an.rounds() - 1, LabelSource::Final), LabelSource::Final);
  rep.static_seq_prefix = an.regret_series_prefix(LabelSource::Sequence);
  rep.static_final_prefix = an.regret_series_prefix(LabelSource::Final);
  rep.dynamic_seq = an.dynamic_series(LabelSource::Sequence);
  rep.dynamic_final = an.dynamic_series(LabelSource::Final);
  rep.extra_term = an.extra_term_series();
  rep.bound_slack_static = rep.static_seq_prefix + rep.extra_term - rep.static_final_prefix;
  rep.bound_slack_dynamic = rep.dynamic_seq + rep.extra_term - rep.dynamic_final;
  if (an.rounds() >= 20) {
    rep.sub_static_final = sublinearity_stats(rep.static_final);
    rep.sub_dynamic_final = sublinearity_stats(rep.dynamic_final);
    rep.sub_extra_term = sublinearity_stats(rep.extra_term);
  }
  if (records.size() >= 10)
    rep.predictability = predictability_diagnostic(records, shape, alpha_reg);
  return rep;
}

}  // namespace csil
