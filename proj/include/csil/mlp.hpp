#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "csil/rng.hpp"

namespace csil {

// Small dense feed-forward networks on flat parameter vectors. Flat storage
// keeps policies and ensembles representable as a single theta, which the
// projection set, the online players, and the regret probes all operate on.

enum class Activation { Swish, Tanh };

struct MlpSpec {
  int input = 0;
  int output = 0;
  std::vector<int> hidden;
  Activation activation = Activation::Swish;

  int layer_count() const { return static_cast<int>(hidden.size()) + 1; }

  int layer_in(int l) const { return l == 0 ? input : hidden[l - 1]; }
  int layer_out(int l) const {
    return l == static_cast<int>(hidden.size()) ? output : hidden[l];
  }

  int param_count() const {
    int n = 0;
    for (int l = 0; l < layer_count(); ++l) n += layer_out(l) * (layer_in(l) + 1);
    return n;
  }

  int layer_offset(int l) const {
    int off = 0;
    for (int k = 0; k < l; ++k) off += layer_out(k) * (layer_in(k) + 1);
    return off;
  }
};

namespace detail {

inline Eigen::Map<const Eigen::MatrixXd> weight_view(const MlpSpec& spec,
                                                     const Eigen::VectorXd& params, int l) {
  return {params.data() + spec.layer_offset(l), spec.layer_out(l), spec.layer_in(l)};
}

inline Eigen::Map<const Eigen::VectorXd> bias_view(const MlpSpec& spec,
                                                   const Eigen::VectorXd& params, int l) {
  return {params.data() + spec.layer_offset(l) + spec.layer_out(l) * spec.layer_in(l),
          spec.layer_out(l)};
}

inline Eigen::Map<Eigen::MatrixXd> weight_view(const MlpSpec& spec, Eigen::VectorXd& params,
                                               int l) {
  return {params.data() + spec.layer_offset(l), spec.layer_out(l), spec.layer_in(l)};
}

inline Eigen::Map<Eigen::VectorXd> bias_view(const MlpSpec& spec, Eigen::VectorXd& params, int l) {
  return {params.data() + spec.layer_offset(l) + spec.layer_out(l) * spec.layer_in(l),
          spec.layer_out(l)};
}

inline Eigen::ArrayXXd activate(Activation act, const Eigen::ArrayXXd& z) {
  if (act == Activation::Tanh) return z.tanh();
  return z / (1.0 + (-z).exp());  // swish: z * sigmoid(z)
}

inline Eigen::ArrayXXd activate_grad(Activation act, const Eigen::ArrayXXd& z) {
  if (act == Activation::Tanh) {
    Eigen::ArrayXXd t = z.tanh();
    return 1.0 - t.square();
  }
  Eigen::ArrayXXd s = 1.0 / (1.0 + (-z).exp());
  return s * (1.0 + z * (1.0 - s));
}

}  // namespace detail

// Xavier-uniform weights, zero biases. A zero output layer makes the net
// start as the zero function, which downstream residual models rely on.
inline Eigen::VectorXd mlp_init(const MlpSpec& spec, std::uint64_t seed,
                                bool zero_output_layer = true) {
  Eigen::VectorXd params = Eigen::VectorXd::Zero(spec.param_count());
  Rng rng(hash_combine(seed, 0x1417));
  const int L = spec.layer_count();
  for (int l = 0; l < L; ++l) {
    if (zero_output_layer && l == L - 1) break;
    auto W = detail::weight_view(spec, params, l);
    const double bound = std::sqrt(6.0 / (spec.layer_in(l) + spec.layer_out(l)));
    for (Eigen::Index c = 0; c < W.cols(); ++c)
      for (Eigen::Index r = 0; r < W.rows(); ++r) W(r, c) = rng.uniform(-bound, bound);
  }
  return params;
}

// Rows of X are samples; returns one row per sample.
inline Eigen::MatrixXd mlp_forward_batch(const MlpSpec& spec, const Eigen::VectorXd& params,
                                         const Eigen::MatrixXd& X) {
  Eigen::MatrixXd a = X;
  const int L = spec.layer_count();
  for (int l = 0; l < L; ++l) {
    Eigen::MatrixXd z = a * detail::weight_view(spec, params, l).transpose();
    z.rowwise() += detail::bias_view(spec, params, l).transpose();
    if (l < L - 1)
      a = detail::activate(spec.activation, z.array()).matrix();
    else
      a = std::move(z);
  }
  return a;
}

inline Eigen::VectorXd mlp_forward(const MlpSpec& spec, const Eigen::VectorXd& params,
                                   const Eigen::VectorXd& x) {
  return mlp_forward_batch(spec, params, x.transpose()).row(0);
}

// Gradient of sum_i r_i . f(x_i) with respect to the parameters.
inline Eigen::VectorXd mlp_backprop_batch(const MlpSpec& spec, const Eigen::VectorXd& params,
                                          const Eigen::MatrixXd& X, const Eigen::MatrixXd& R) {
  const int L = spec.layer_count();
  std::vector<Eigen::MatrixXd> acts(L);  // post-activation inputs to each layer
  std::vector<Eigen::MatrixXd> zs(L - 1);
  Eigen::MatrixXd a = X;
  for (int l = 0; l < L; ++l) {
    acts[l] = a;
    Eigen::MatrixXd z = a * detail::weight_view(spec, params, l).transpose();
    z.rowwise() += detail::bias_view(spec, params, l).transpose();
    if (l < L - 1) {
      zs[l] = z;
      a = detail::activate(spec.activation, z.array()).matrix();
    }
  }

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(spec.param_count());
  Eigen::MatrixXd delta = R;
  for (int l = L - 1; l >= 0; --l) {
    detail::weight_view(spec, grad, l) = delta.transpose() * acts[l];
    detail::bias_view(spec, grad, l) = delta.colwise().sum().transpose();
    if (l > 0) {
      delta = (delta * detail::weight_view(spec, params, l)).array() *
              detail::activate_grad(spec.activation, zs[l - 1].array());
    }
  }
  return grad;
}

// Exact Jacobian of f(x) with respect to the parameters, one reverse pass
// per output coordinate.
inline Eigen::MatrixXd mlp_param_jacobian(const MlpSpec& spec, const Eigen::VectorXd& params,
                                          const Eigen::VectorXd& x) {
  Eigen::MatrixXd J(spec.output, spec.param_count());
  for (int k = 0; k < spec.output; ++k) {
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(1, spec.output);
    r(0, k) = 1.0;
    J.row(k) = mlp_backprop_batch(spec, params, x.transpose(), r);
  }
  return J;
}

enum class Optimizer { Sgd, Adam };

struct MlpTrainConfig {
  int epochs = 300;
  double step_size = 0.05;
  int batch_size = 32;
  Optimizer optimizer = Optimizer::Sgd;
  std::uint64_t seed = 0;
};

struct MlpTrainResult {
  double final_loss = 0.0;
  bool diverged = false;
};

// Mini-batch training on mean squared error. Deterministic given the seed:
// the init and the per-epoch shuffles all come from counter streams.
inline MlpTrainResult mlp_train(const MlpSpec& spec, Eigen::VectorXd& params,
                                const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                const MlpTrainConfig& cfg) {
  if (X.rows() != Y.rows() || X.rows() == 0)
    throw std::invalid_argument("mlp_train: empty or misaligned training set");
  const int n = static_cast<int>(X.rows());
  const int batch = std::max(1, std::min(cfg.batch_size, n));
  Rng shuffler(hash_combine(cfg.seed, 0x5a0f));

  Eigen::VectorXd m, v;
  if (cfg.optimizer == Optimizer::Adam) {
    m = Eigen::VectorXd::Zero(spec.param_count());
    v = Eigen::VectorXd::Zero(spec.param_count());
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long adam_t = 0;

  MlpTrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = shuffler.permutation(n);
    for (int start = 0; start < n; start += batch) {
      const int nb = std::min(batch, n - start);
      Eigen::MatrixXd xb(nb, X.cols()), yb(nb, Y.cols());
      for (int k = 0; k < nb; ++k) {
        xb.row(k) = X.row(order[start + k]);
        yb.row(k) = Y.row(order[start + k]);
      }
      Eigen::MatrixXd pred = mlp_forward_batch(spec, params, xb);
      Eigen::MatrixXd resid = (2.0 / nb) * (pred - yb);
      Eigen::VectorXd grad = mlp_backprop_batch(spec, params, xb, resid);
      if (cfg.optimizer == Optimizer::Adam) {
        ++adam_t;
        m = b1 * m + (1 - b1) * grad;
        v = b2 * v + (1 - b2) * grad.cwiseProduct(grad);
        Eigen::VectorXd mhat = m / (1 - std::pow(b1, adam_t));
        Eigen::VectorXd vhat = v / (1 - std::pow(b2, adam_t));
        params -= cfg.step_size * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
      } else {
        params -= cfg.step_size * grad;
      }
      if (!params.allFinite()) {
        result.diverged = true;
        result.final_loss = std::numeric_limits<double>::quiet_NaN();
        return result;
      }
    }
  }
  Eigen::MatrixXd pred = mlp_forward_batch(spec, params, X);
  result.final_loss = (pred - Y).squaredNorm() / n;
  result.diverged = !std::isfinite(result.final_loss);
  return result;
}

}  // namespace csil
