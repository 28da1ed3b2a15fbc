#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "csil/env.hpp"
#include "csil/imitation.hpp"
#include "csil/io.hpp"
#include "csil/policy.hpp"
#include "csil/supervisor.hpp"

namespace csil {

// Declarative experiment description. Every field has a default, so a
// minimal config is just {"schema_version": 1}; violations are reported with
// the offending field's path.

inline constexpr int kSchemaVersion = 1;

struct ConfigError : std::runtime_error {
  ConfigError(const std::string& path, const std::string& reason)
      : std::runtime_error("config error at " + path + ": " + reason) {}
};

struct ExperimentFlags {
  bool evaluate_supervisor_rollout = false;
  bool emit_prefix_comparators = true;
};

struct PolicySpec {
  PolicyKind kind = PolicyKind::LinearAffine;
  double feature_clip = 4.0;
  double projection_radius = 50.0;
  int ensemble_size = 5;
  std::vector<int> hidden = {20, 20};
  Activation activation = Activation::Swish;
  int epochs = 300;
  double step_size = 0.05;
  int batch_size = 32;

  PolicyParams make(const EnvSpec& env, std::uint64_t seed = 0) const {
    if (kind == PolicyKind::LinearAffine)
      return make_linear_policy(env.state_dim, env.action_dim, feature_clip, projection_radius);
    return make_mlp_policy(env.state_dim, env.action_dim, ensemble_size, hidden, activation,
                           feature_clip, projection_radius, seed);
  }

  FitMlpConfig mlp_fit_config() const {
    FitMlpConfig cfg;
    cfg.epochs = epochs;
    cfg.step_size = step_size;
    cfg.batch_size = batch_size;
    return cfg;
  }
};

struct ExperimentConfig {
  EnvSpec env = make_lin_reach();
  PolicySpec policy;
  SupervisorSpec supervisor;
  PlayerConfig player;
  int rounds = 50;
  std::vector<std::uint64_t> seeds = {0};
  std::string output_dir = "out";
  ExperimentFlags flags;

  LoopConfig loop_config() const {
    LoopConfig cfg;
    cfg.rounds = rounds;
    cfg.player = player;
    cfg.player.mlp = policy.mlp_fit_config();
    cfg.supervisor = supervisor;
    cfg.evaluate_supervisor_rollout = flags.evaluate_supervisor_rollout;
    return cfg;
  }
};

namespace detail {

using nlohmann::json;

inline double get_num(const json& j, const char* key, double fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) throw ConfigError(path + "." + key, "expected a number");
  return j[key].get<double>();
}

inline int get_int(const json& j, const char* key, int fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer()) throw ConfigError(path + "." + key, "expected an integer");
  return j[key].get<int>();
}

inline bool get_bool(const json& j, const char* key, bool fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_boolean()) throw ConfigError(path + "." + key, "expected a boolean");
  return j[key].get<bool>();
}

inline std::string get_str(const json& j, const char* key, const std::string& fallback,
                           const std::string& path) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_string()) throw ConfigError(path + "." + key, "expected a string");
  return j[key].get<std::string>();
}

inline Vector get_vector(const json& j, const char* key, const Vector& fallback,
                         const std::string& path) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_array()) throw ConfigError(path + "." + key, "expected an array of numbers");
  Vector v(j[key].size());
  for (std::size_t i = 0; i < j[key].size(); ++i) {
    if (!j[key][i].is_number()) throw ConfigError(path + "." + key, "expected numeric entries");
    v[i] = j[key][i].get<double>();
  }
  return v;
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::json;
  ExperimentConfig cfg;

  if (!j.contains("schema_version"))
    throw ConfigError("schema_version", "required field is missing");
  if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != kSchemaVersion)
    throw ConfigError("schema_version",
                      "unsupported version (expected " + std::to_string(kSchemaVersion) + ")");

  if (j.contains("env")) {
    const json& e = j["env"];
    const std::string kind = detail::get_str(e, "kind", "lin_reach", "env");
    if (kind == "lin_reach")
      cfg.env.kind = EnvKind::LinReach;
    else if (kind == "nonlin_reach")
      cfg.env.kind = EnvKind::NonlinReach;
    else
      throw ConfigError("env.kind", "unknown kind '" + kind + "'");
    cfg.env.state_dim = detail::get_int(e, "state_dim", cfg.env.state_dim, "env");
    cfg.env.action_dim = detail::get_int(e, "action_dim", cfg.env.action_dim, "env");
    cfg.env.horizon = detail::get_int(e, "horizon", cfg.env.horizon, "env");
    cfg.env.action_low = detail::get_vector(e, "action_low", cfg.env.action_low, "env");
    cfg.env.action_high = detail::get_vector(e, "action_high", cfg.env.action_high, "env");
    cfg.env.noise_std = detail::get_num(e, "noise_std", cfg.env.noise_std, "env");
    cfg.env.goal = detail::get_vector(e, "goal", cfg.env.goal, "env");
    cfg.env.damping = detail::get_num(e, "damping", cfg.env.damping, "env");
    cfg.env.dt = detail::get_num(e, "dt", cfg.env.dt, "env");
    cfg.env.action_cost = detail::get_num(e, "action_cost", cfg.env.action_cost, "env");
    cfg.env.start_box_width =
        detail::get_num(e, "start_box_width", cfg.env.start_box_width, "env");
    cfg.env.drift_gain = detail::get_num(e, "drift_gain", cfg.env.drift_gain, "env");
    try {
      cfg.env.validate();
    } catch (const std::invalid_argument& err) {
      throw ConfigError("env", err.what());
    }
  }

  if (j.contains("policy")) {
    const json& p = j["policy"];
    const std::string kind = detail::get_str(p, "kind", "linear_affine", "policy");
    if (kind == "linear_affine")
      cfg.policy.kind = PolicyKind::LinearAffine;
    else if (kind == "mlp_ensemble")
      cfg.policy.kind = PolicyKind::MlpEnsemble;
    else
      throw ConfigError("policy.kind", "unknown kind '" + kind + "'");
    cfg.policy.feature_clip = detail::get_num(p, "feature_clip", cfg.policy.feature_clip, "policy");
    cfg.policy.projection_radius =
        detail::get_num(p, "projection_radius", cfg.policy.projection_radius, "policy");
    if (!(cfg.policy.projection_radius > 0))
      throw ConfigError("policy.projection_radius", "must be positive");
    cfg.policy.ensemble_size =
        detail::get_int(p, "ensemble_size", cfg.policy.ensemble_size, "policy");
    if (cfg.policy.ensemble_size < 1) throw ConfigError("policy.ensemble_size", "must be >= 1");
    if (p.contains("hidden")) {
      if (!p["hidden"].is_array()) throw ConfigError("policy.hidden", "expected an array");
      cfg.policy.hidden.clear();
      for (const auto& h : p["hidden"]) {
        if (!h.is_number_integer() || h.get<int>() < 1)
          throw ConfigError("policy.hidden", "expected positive integers");
        cfg.policy.hidden.push_back(h.get<int>());
      }
    }
    const std::string act = detail::get_str(p, "activation", "swish", "policy");
    if (act == "swish")
      cfg.policy.activation = Activation::Swish;
    else if (act == "tanh")
      cfg.policy.activation = Activation::Tanh;
    else
      throw ConfigError("policy.activation", "unknown activation '" + act + "'");
    cfg.policy.epochs = detail::get_int(p, "epochs", cfg.policy.epochs, "policy");
    cfg.policy.step_size = detail::get_num(p, "step_size", cfg.policy.step_size, "policy");
    cfg.policy.batch_size = detail::get_int(p, "batch_size", cfg.policy.batch_size, "policy");
  }

  if (j.contains("supervisor")) {
    const json& s = j["supervisor"];
    const std::string kind = detail::get_str(s, "kind", "synthetic", "supervisor");
    if (kind == "synthetic")
      cfg.supervisor.kind = SupervisorKind::Synthetic;
    else if (kind == "mpc_cem")
      cfg.supervisor.kind = SupervisorKind::MpcCem;
    else
      throw ConfigError("supervisor.kind", "unknown kind '" + kind + "'");

    const std::string sched = detail::get_str(s, "schedule", "harmonic", "supervisor");
    if (sched == "harmonic")
      cfg.supervisor.schedule.kind = ScheduleKind::Harmonic;
    else if (sched == "sqrt")
      cfg.supervisor.schedule.kind = ScheduleKind::Sqrt;
    else if (sched == "geometric")
      cfg.supervisor.schedule.kind = ScheduleKind::Geometric;
    else if (sched == "constant")
      cfg.supervisor.schedule.kind = ScheduleKind::Constant;
    else
      throw ConfigError("supervisor.schedule", "unknown schedule '" + sched + "'");
    cfg.supervisor.schedule.c = detail::get_num(s, "c", cfg.supervisor.schedule.c, "supervisor");
    if (cfg.supervisor.schedule.c < 0) throw ConfigError("supervisor.c", "must be >= 0");
    cfg.supervisor.schedule.rho =
        detail::get_num(s, "rho", cfg.supervisor.schedule.rho, "supervisor");
    if (cfg.supervisor.schedule.kind == ScheduleKind::Geometric &&
        !(cfg.supervisor.schedule.rho > 0 && cfg.supervisor.schedule.rho < 1))
      throw ConfigError("supervisor.rho", "must lie in (0,1)");
    cfg.supervisor.alternating =
        detail::get_bool(s, "alternating", cfg.supervisor.alternating, "supervisor");
    cfg.supervisor.kp = detail::get_num(s, "kp", cfg.supervisor.kp, "supervisor");
    cfg.supervisor.kd = detail::get_num(s, "kd", cfg.supervisor.kd, "supervisor");

    if (s.contains("plan")) {
      const json& pl = s["plan"];
      const std::string path = "supervisor.plan";
      CemConfig& c = cfg.supervisor.plan;
      c.horizon = detail::get_int(pl, "horizon", c.horizon, path);
      c.population = detail::get_int(pl, "population", c.population, path);
      c.elites = detail::get_int(pl, "elites", c.elites, path);
      c.iterations = detail::get_int(pl, "iterations", c.iterations, path);
      c.particles_per_member =
          detail::get_int(pl, "particles_per_member", c.particles_per_member, path);
      c.init_std_fraction = detail::get_num(pl, "init_std_fraction", c.init_std_fraction, path);
      c.variance_floor = detail::get_num(pl, "variance_floor", c.variance_floor, path);
    }
    // planner configs must keep strict elite pressure
    if (cfg.supervisor.plan.elites >= cfg.supervisor.plan.population)
      throw ConfigError("supervisor.plan.elites",
                        "must be < supervisor.plan.population (got " +
                            std::to_string(cfg.supervisor.plan.elites) + " of " +
                            std::to_string(cfg.supervisor.plan.population) + ")");
    try {
      cfg.supervisor.plan.validate();
    } catch (const std::invalid_argument& err) {
      throw ConfigError("supervisor.plan", err.what());
    }

    if (s.contains("dynamics")) {
      const json& d = s["dynamics"];
      const std::string path = "supervisor.dynamics";
      DynamicsConfig& c = cfg.supervisor.dynamics;
      c.members = detail::get_int(d, "members", c.members, path);
      if (c.members < 1) throw ConfigError(path + ".members", "must be >= 1");
      c.hidden_units = detail::get_int(d, "hidden_units", c.hidden_units, path);
      c.epochs = detail::get_int(d, "epochs", c.epochs, path);
      c.step_size = detail::get_num(d, "step_size", c.step_size, path);
      c.batch_size = detail::get_int(d, "batch_size", c.batch_size, path);
    }
    cfg.supervisor.seed_rollouts =
        detail::get_int(s, "seed_rollouts", cfg.supervisor.seed_rollouts, "supervisor");
    if (cfg.supervisor.seed_rollouts < 0)
      throw ConfigError("supervisor.seed_rollouts", "must be >= 0");
  }

  if (j.contains("player")) {
    const json& p = j["player"];
    const std::string kind = detail::get_str(p, "kind", "dagger_aggregate", "player");
    if (kind == "dagger_aggregate")
      cfg.player.kind = PlayerKind::DaggerAggregate;
    else if (kind == "greedy_per_round")
      cfg.player.kind = PlayerKind::GreedyPerRound;
    else if (kind == "ogd")
      cfg.player.kind = PlayerKind::Ogd;
    else
      throw ConfigError("player.kind", "unknown kind '" + kind + "'");
    cfg.player.rollouts_per_round =
        detail::get_int(p, "rollouts_per_round", cfg.player.rollouts_per_round, "player");
    if (cfg.player.rollouts_per_round < 1)
      throw ConfigError("player.rollouts_per_round", "must be >= 1");
    cfg.player.alpha_reg = detail::get_num(p, "alpha_reg", cfg.player.alpha_reg, "player");
    if (!(cfg.player.alpha_reg > 0)) throw ConfigError("player.alpha_reg", "must be positive");
    cfg.player.ogd_step_numerator =
        detail::get_num(p, "ogd_step_numerator", cfg.player.ogd_step_numerator, "player");
    if (!(cfg.player.ogd_step_numerator > 0))
      throw ConfigError("player.ogd_step_numerator", "must be positive");
  }

  cfg.rounds = detail::get_int(j, "rounds", cfg.rounds, "");
  if (cfg.rounds < 1) throw ConfigError("rounds", "must be >= 1");

  if (j.contains("seeds")) {
    if (!j["seeds"].is_array() || j["seeds"].empty())
      throw ConfigError("seeds", "expected a non-empty array of integers");
    cfg.seeds.clear();
    for (const auto& s : j["seeds"]) {
      if (!s.is_number_integer()) throw ConfigError("seeds", "expected integer entries");
      cfg.seeds.push_back(s.get<std::uint64_t>());
    }
  }

  cfg.output_dir = detail::get_str(j, "output_dir", cfg.output_dir, "");

  if (j.contains("flags")) {
    const json& f = j["flags"];
    cfg.flags.evaluate_supervisor_rollout = detail::get_bool(
        f, "evaluate_supervisor_rollout", cfg.flags.evaluate_supervisor_rollout, "flags");
    cfg.flags.emit_prefix_comparators =
        detail::get_bool(f, "emit_prefix_comparators", cfg.flags.emit_prefix_comparators, "flags");
  }
  return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["env"] = {
      {"kind", cfg.env.kind == EnvKind::LinReach ? "lin_reach" : "nonlin_reach"},
      {"state_dim", cfg.env.state_dim},
      {"action_dim", cfg.env.action_dim},
      {"horizon", cfg.env.horizon},
      {"action_low", std::vector<double>(cfg.env.action_low.begin(), cfg.env.action_low.end())},
      {"action_high", std::vector<double>(cfg.env.action_high.begin(), cfg.env.action_high.end())},
      {"noise_std", cfg.env.noise_std},
      {"goal", std::vector<double>(cfg.env.goal.begin(), cfg.env.goal.end())},
      {"damping", cfg.env.damping},
      {"dt", cfg.env.dt},
      {"action_cost", cfg.env.action_cost},
      {"start_box_width", cfg.env.start_box_width},
      {"drift_gain", cfg.env.drift_gain},
  };
  j["policy"] = {
      {"kind", cfg.policy.kind == PolicyKind::LinearAffine ? "linear_affine" : "mlp_ensemble"},
      {"feature_clip", cfg.policy.feature_clip},
      {"projection_radius", cfg.policy.projection_radius},
      {"ensemble_size", cfg.policy.ensemble_size},
      {"hidden", cfg.policy.hidden},
      {"activation", cfg.policy.activation == Activation::Swish ? "swish" : "tanh"},
      {"epochs", cfg.policy.epochs},
      {"step_size", cfg.policy.step_size},
      {"batch_size", cfg.policy.batch_size},
  };
  const char* sched = nullptr;
  switch (cfg.supervisor.schedule.kind) {
    case ScheduleKind::Harmonic: sched = "harmonic"; break;
    case ScheduleKind::Sqrt: sched = "sqrt"; break;
    case ScheduleKind::Geometric: sched = "geometric"; break;
    case ScheduleKind::Constant: sched = "constant"; break;
  }
  j["supervisor"] = {
      {"kind", cfg.supervisor.kind == SupervisorKind::Synthetic ? "synthetic" : "mpc_cem"},
      {"schedule", sched},
      {"c", cfg.supervisor.schedule.c},
      {"rho", cfg.supervisor.schedule.rho},
      {"alternating", cfg.supervisor.alternating},
      {"kp", cfg.supervisor.kp},
      {"kd", cfg.supervisor.kd},
      {"plan",
       {{"horizon", cfg.supervisor.plan.horizon},
        {"population", cfg.supervisor.plan.population},
        {"elites", cfg.supervisor.plan.elites},
        {"iterations", cfg.supervisor.plan.iterations},
        {"particles_per_member", cfg.supervisor.plan.particles_per_member},
        {"init_std_fraction", cfg.supervisor.plan.init_std_fraction},
        {"variance_floor", cfg.supervisor.plan.variance_floor}}},
      {"dynamics",
       {{"members", cfg.supervisor.dynamics.members},
        {"hidden_units", cfg.supervisor.dynamics.hidden_units},
        {"epochs", cfg.supervisor.dynamics.epochs},
        {"step_size", cfg.supervisor.dynamics.step_size},
        {"batch_size", cfg.supervisor.dynamics.batch_size}}},
      {"seed_rollouts", cfg.supervisor.seed_rollouts},
  };
  const char* player = nullptr;
  switch (cfg.player.kind) {
    case PlayerKind::DaggerAggregate: player = "dagger_aggregate"; break;
    case PlayerKind::GreedyPerRound: player = "greedy_per_round"; break;
    case PlayerKind::Ogd: player = "ogd"; break;
  }
  j["player"] = {
      {"kind", player},
      {"rollouts_per_round", cfg.player.rollouts_per_round},
      {"alpha_reg", cfg.player.alpha_reg},
      {"ogd_step_numerator", cfg.player.ogd_step_numerator},
  };
  j["rounds"] = cfg.rounds;
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  j["flags"] = {
      {"evaluate_supervisor_rollout", cfg.flags.evaluate_supervisor_rollout},
      {"emit_prefix_comparators", cfg.flags.emit_prefix_comparators},
  };
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path, std::string("not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

}  // namespace csil
