#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "csil/rng.hpp"

namespace csil {

// Cross-entropy optimization over length-H action sequences in a box.
// Candidates are sampled from a diagonal Gaussian clipped to the box, the
// Gaussian is refit to the top-K candidates, and the best sequence ever
// evaluated is returned (so the tracked optimum never regresses).

struct CemConfig {
  int horizon = 15;         // H
  int population = 200;     // P
  int elites = 20;          // K
  int iterations = 5;       // J
  int particles_per_member = 1;
  double init_std_fraction = 0.25;  // initial sigma as a fraction of box width
  double variance_floor = 1e-6;     // lower clamp on sigma^2

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("cem: horizon must be >= 1");
    if (population < 1) throw std::invalid_argument("cem: population must be >= 1");
    if (iterations < 1) throw std::invalid_argument("cem: iterations must be >= 1");
    if (elites < 1) throw std::invalid_argument("cem: elites must be >= 1");
    if (elites > population)
      throw std::invalid_argument("cem: elites must be <= population");
    if (particles_per_member < 1)
      throw std::invalid_argument("cem: particles_per_member must be >= 1");
    if (!(init_std_fraction > 0)) throw std::invalid_argument("cem: init_std_fraction must be > 0");
    if (!(variance_floor > 0)) throw std::invalid_argument("cem: variance_floor must be > 0");
  }
};

struct CemResult {
  Eigen::MatrixXd sequence;  // H x action_dim
  double best_return = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_by_iteration;  // best seen after each iteration
  int variance_floor_hits = 0;
};

// Evaluates a batch of candidate sequences; higher return is better.
using BatchObjective =
    std::function<Eigen::VectorXd(const std::vector<Eigen::MatrixXd>&)>;

inline CemResult cem_optimize(const BatchObjective& evaluate, const Eigen::VectorXd& action_low,
                              const Eigen::VectorXd& action_high, const CemConfig& cfg,
                              std::uint64_t seed) {
  cfg.validate();
  const int H = cfg.horizon;
  const int A = static_cast<int>(action_low.size());
  Rng rng(hash_combine(seed, 0xce111));

  Eigen::MatrixXd mean = ((action_low + action_high) / 2.0).transpose().replicate(H, 1);
  Eigen::MatrixXd stddev =
      (cfg.init_std_fraction * (action_high - action_low)).transpose().replicate(H, 1);

  CemResult result;
  result.best_by_iteration.resize(cfg.iterations);
  std::vector<Eigen::MatrixXd> candidates;
  for (int j = 0; j < cfg.iterations; ++j) {
    candidates.assign(cfg.population, Eigen::MatrixXd());
    for (int p = 0; p < cfg.population; ++p) {
      Eigen::MatrixXd c(H, A);
      for (int t = 0; t < H; ++t)
        for (int d = 0; d < A; ++d)
          c(t, d) = std::min(std::max(mean(t, d) + stddev(t, d) * rng.normal(), action_low[d]),
                             action_high[d]);
      candidates[p] = std::move(c);
    }
    // From the second iteration on, score the refit mean as well; elites come
    // from the samples only, but a near-optimal mean can claim best-seen.
    if (j > 0) candidates.push_back(mean);
    Eigen::VectorXd returns = evaluate(candidates);
    if (returns.size() != static_cast<Eigen::Index>(candidates.size()))
      throw std::logic_error("cem: objective returned wrong batch size");

    for (std::size_t p = 0; p < candidates.size(); ++p) {
      if (returns[p] > result.best_return) {
        result.best_return = returns[p];
        result.sequence = candidates[p];
      }
    }
    result.best_by_iteration[j] = result.best_return;

    std::vector<int> order(cfg.population);
    for (int p = 0; p < cfg.population; ++p) order[p] = p;
    std::partial_sort(order.begin(), order.begin() + cfg.elites, order.end(), [&](int a, int b) {
      return returns[a] != returns[b] ? returns[a] > returns[b] : a < b;
    });

    Eigen::MatrixXd emean = Eigen::MatrixXd::Zero(H, A);
    for (int k = 0; k < cfg.elites; ++k) emean += candidates[order[k]];
    emean /= cfg.elites;
    Eigen::MatrixXd evar = Eigen::MatrixXd::Zero(H, A);
    for (int k = 0; k < cfg.elites; ++k)
      evar += (candidates[order[k]] - emean).array().square().matrix();
    evar /= cfg.elites;
    for (int t = 0; t < H; ++t)
      for (int d = 0; d < A; ++d)
        if (evar(t, d) < cfg.variance_floor) {
          evar(t, d) = cfg.variance_floor;
          ++result.variance_floor_hits;
        }
    mean = std::move(emean);
    stddev = evar.array().sqrt().matrix();
  }
  return result;
}

}  // namespace csil
