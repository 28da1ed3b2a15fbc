#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "csil/config.hpp"
#include "csil/io.hpp"
#include "csil/regret.hpp"

namespace csil {

// Experiment runner: executes the training loop per seed, analyzes regret,
// and writes one artifact directory per (config, seed). Timing data lives in
// timing.json only; everything else a run writes is a pure function of
// (config, seed), so reruns byte-compare equal.

namespace fs = std::filesystem;

inline nlohmann::json params_to_json(const PolicyParams& p) {
  nlohmann::json j;
  j["kind"] = p.kind == PolicyKind::LinearAffine ? "linear_affine" : "mlp_ensemble";
  j["state_dim"] = p.state_dim;
  j["action_dim"] = p.action_dim;
  j["feature_clip"] = p.feature_clip;
  j["projection_radius"] = p.projection_radius;
  j["jacobian_bound"] = p.jacobian_bound;
  j["theta"] = std::vector<double>(p.theta.begin(), p.theta.end());
  if (p.kind == PolicyKind::MlpEnsemble) {
    j["ensemble_size"] = p.ensemble_size;
    j["hidden"] = p.member.hidden;
    j["activation"] = p.member.activation == Activation::Swish ? "swish" : "tanh";
  }
  return j;
}

inline PolicyParams params_from_json(const nlohmann::json& j) {
  PolicyParams p;
  const std::string kind = j.at("kind").get<std::string>();
  const int state_dim = j.at("state_dim").get<int>();
  const int action_dim = j.at("action_dim").get<int>();
  const double clip = j.at("feature_clip").get<double>();
  const double radius = j.at("projection_radius").get<double>();
  if (kind == "linear_affine") {
    p = make_linear_policy(state_dim, action_dim, clip, radius);
  } else {
    p = make_mlp_policy(state_dim, action_dim, j.at("ensemble_size").get<int>(),
                        j.at("hidden").get<std::vector<int>>(),
                        j.at("activation").get<std::string>() == "tanh" ? Activation::Tanh
                                                                        : Activation::Swish,
                        clip, radius);
  }
  const auto theta = j.at("theta").get<std::vector<double>>();
  if (static_cast<int>(theta.size()) != p.dim())
    throw std::runtime_error("params_from_json: theta length does not match the declared shape");
  p.theta = Eigen::Map<const Eigen::VectorXd>(theta.data(), theta.size());
  p.jacobian_bound = j.at("jacobian_bound").get<double>();
  return p;
}

inline nlohmann::json ensemble_to_json(const DynamicsEnsemble& ens) {
  nlohmann::json j;
  j["state_dim"] = ens.state_dim;
  j["action_dim"] = ens.action_dim;
  j["hidden"] = ens.member_spec.hidden;
  j["activation"] = ens.member_spec.activation == Activation::Swish ? "swish" : "tanh";
  j["seed"] = ens.seed;
  j["input_mean"] = std::vector<double>(ens.input_norm.mean.begin(), ens.input_norm.mean.end());
  j["input_std"] = std::vector<double>(ens.input_norm.std.begin(), ens.input_norm.std.end());
  j["target_mean"] = std::vector<double>(ens.target_norm.mean.begin(), ens.target_norm.mean.end());
  j["target_std"] = std::vector<double>(ens.target_norm.std.begin(), ens.target_norm.std.end());
  j["holdout_mse"] = std::vector<double>(ens.holdout_mse.begin(), ens.holdout_mse.end());
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : ens.members) members.push_back(std::vector<double>(m.begin(), m.end()));
  j["members"] = members;
  return j;
}

inline DynamicsEnsemble ensemble_from_json(const nlohmann::json& j) {
  DynamicsEnsemble ens;
  ens.state_dim = j.at("state_dim").get<int>();
  ens.action_dim = j.at("action_dim").get<int>();
  ens.member_spec.input = ens.state_dim + ens.action_dim;
  ens.member_spec.output = ens.state_dim;
  ens.member_spec.hidden = j.at("hidden").get<std::vector<int>>();
  ens.member_spec.activation =
      j.at("activation").get<std::string>() == "tanh" ? Activation::Tanh : Activation::Swish;
  ens.seed = j.at("seed").get<std::uint64_t>();
  auto vec = [](const nlohmann::json& arr) {
    const auto v = arr.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()).eval();
  };
  ens.input_norm.mean = vec(j.at("input_mean"));
  ens.input_norm.std = vec(j.at("input_std"));
  ens.target_norm.mean = vec(j.at("target_mean"));
  ens.target_norm.std = vec(j.at("target_std"));
  ens.holdout_mse = vec(j.at("holdout_mse"));
  for (const auto& m : j.at("members")) ens.members.push_back(vec(m));
  for (const auto& m : ens.members)
    if (m.size() != ens.member_spec.param_count())
      throw std::runtime_error("ensemble_from_json: member length does not match the spec");
  return ens;
}

inline nlohmann::json regret_report_to_json(const RegretReport& rep, bool emit_prefix) {
  auto arr = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.begin(), v.end());
  };
  nlohmann::json j;
  j["action_diameter"] = rep.action_diam;
  j["alpha_reg"] = rep.alpha_reg;
  j["static_seq"] = arr(rep.static_seq);
  j["static_final"] = arr(rep.static_final);
  if (emit_prefix) {
    j["static_seq_prefix"] = arr(rep.static_seq_prefix);
    j["static_final_prefix"] = arr(rep.static_final_prefix);
  }
  j["dynamic_seq"] = arr(rep.dynamic_seq);
  j["dynamic_final"] = arr(rep.dynamic_final);
  j["extra_term"] = arr(rep.extra_term);
  j["bound_slack_static"] = arr(rep.bound_slack_static);
  j["bound_slack_dynamic"] = arr(rep.bound_slack_dynamic);
  j["sublinearity"] = {
      {"static_final",
       {{"loglog_slope", rep.sub_static_final.loglog_slope},
        {"avg_ratio", rep.sub_static_final.avg_ratio}}},
      {"dynamic_final",
       {{"loglog_slope", rep.sub_dynamic_final.loglog_slope},
        {"avg_ratio", rep.sub_dynamic_final.avg_ratio}}},
      {"extra_term",
       {{"loglog_slope", rep.sub_extra_term.loglog_slope},
        {"avg_ratio", rep.sub_extra_term.avg_ratio}}},
  };
  j["predictability"] = {
      {"beta_hat", rep.predictability.beta_hat},
      {"beta_defined", rep.predictability.beta_defined},
      {"alpha", rep.predictability.alpha},
      {"alpha_exceeds_beta", rep.predictability.alpha_exceeds_beta},
      {"cesaro_ratio", rep.predictability.cesaro_ratio},
  };
  return j;
}

struct RunArtifacts {
  fs::path dir;
  std::string run_id;
};

namespace detail {

inline void write_rounds_csv(const fs::path& path, const std::vector<RoundRecord>& records) {
  std::vector<CsvRow> rows;
  for (const auto& r : records) {
    CsvRow row;
    row.push_back(std::to_string(r.round));
    row.push_back(format_double(r.loss_vs_current));
    row.push_back(format_double(r.loss_vs_final));
    row.push_back(format_double(r.episode_return_learner));
    row.push_back(std::isnan(r.episode_return_supervisor)
                      ? ""
                      : format_double(r.episode_return_supervisor));
    rows.push_back(std::move(row));
  }
  write_csv(path,
            {"round", "loss_vs_psi_i", "loss_vs_psi_N", "episode_return_learner",
             "episode_return_supervisor"},
            rows);
}

inline void write_regret_csv(const fs::path& path, const RegretReport& rep, bool emit_prefix) {
  std::vector<CsvRow> rows;
  auto series = [&rows](const char* metric, const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
      rows.push_back({std::to_string(i + 1), metric, format_double(v[i])});
  };
  series("static_seq", rep.static_seq);
  series("static_final", rep.static_final);
  if (emit_prefix) {
    series("static_seq_prefix", rep.static_seq_prefix);
    series("static_final_prefix", rep.static_final_prefix);
  }
  series("dynamic_seq", rep.dynamic_seq);
  series("dynamic_final", rep.dynamic_final);
  series("extra_term", rep.extra_term);
  series("bound_slack_static", rep.bound_slack_static);
  series("bound_slack_dynamic", rep.bound_slack_dynamic);
  write_csv(path, {"prefix", "metric", "value"}, rows);
}

inline void write_timing_json(const fs::path& path, const std::vector<RoundRecord>& records) {
  std::vector<double> learner, supervisor;
  double lsum = 0, ssum = 0;
  for (const auto& r : records) {
    learner.push_back(r.learner_query_us);
    supervisor.push_back(r.supervisor_query_us);
    lsum += r.learner_query_us;
    ssum += r.supervisor_query_us;
  }
  nlohmann::json j;
  j["learner_query_us_per_round"] = learner;
  j["supervisor_query_us_per_round"] = supervisor;
  j["learner_query_us_mean"] = lsum / records.size();
  j["supervisor_query_us_mean"] = ssum / records.size();
  j["query_ratio"] = lsum > 0 ? ssum / lsum : 0.0;
  write_file(path, j.dump(2) + "\n");
}

}  // namespace detail

// Executes one seed of the experiment and writes its artifact directory.
inline RunArtifacts run_one_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                                 const fs::path& out_root) {
  const nlohmann::json cfg_json = config_to_json(cfg);
  const std::string config_hash = hex64(fnv1a_hash(cfg_json.dump()));
  RunArtifacts art;
  art.run_id = config_hash.substr(0, 8) + "-s" + std::to_string(seed);
  art.dir = out_root / art.run_id;
  fs::create_directories(art.dir);

  PolicyParams shape = cfg.policy.make(cfg.env, seed);
  LoopResult res = run_loop(cfg.env, cfg.loop_config(), shape, seed);

  detail::write_rounds_csv(art.dir / "rounds.csv", res.records);
  detail::write_timing_json(art.dir / "timing.json", res.records);
  write_file(art.dir / "params_final.json", params_to_json(res.final_params).dump(2) + "\n");
  if (res.final_supervisor.kind == SupervisorKind::MpcCem)
    write_file(art.dir / "ensemble_final.json",
               ensemble_to_json(*res.final_supervisor.ensemble).dump(2) + "\n");

  nlohmann::json manifest;
  manifest["schema_version"] = kSchemaVersion;
  manifest["config_hash"] = config_hash;
  manifest["seed"] = seed;
  manifest["run_id"] = art.run_id;
  manifest["config"] = cfg_json;

  if (cfg.policy.kind == PolicyKind::LinearAffine) {
    RegretReport rep = compute_regret_report(res.records, shape, cfg.player.alpha_reg,
                                             action_diameter(cfg.env));
    detail::write_regret_csv(art.dir / "regret.csv", rep, cfg.flags.emit_prefix_comparators);
    write_file(art.dir / "regret.json",
               regret_report_to_json(rep, cfg.flags.emit_prefix_comparators).dump(2) + "\n");
  } else {
    manifest["regret_skipped"] = "comparators are closed-form for the linear family only";
  }
  write_file(art.dir / "manifest.json", manifest.dump(2) + "\n");
  return art;
}

// CLI verb `run`: every configured seed, one directory each.
inline std::vector<RunArtifacts> run_experiment(const ExperimentConfig& cfg,
                                                const std::string& out_override = "",
                                                std::int64_t seed_override = -1) {
  ExperimentConfig effective = cfg;
  if (!out_override.empty()) effective.output_dir = out_override;
  if (seed_override >= 0) effective.seeds = {static_cast<std::uint64_t>(seed_override)};
  std::vector<RunArtifacts> runs;
  for (std::uint64_t seed : effective.seeds)
    runs.push_back(run_one_seed(effective, seed, effective.output_dir));
  return runs;
}

struct TimingReport {
  double learner_us_mean = 0.0;
  double learner_us_std = 0.0;
  double supervisor_us_mean = 0.0;
  double supervisor_us_std = 0.0;
  double learner_episode_us = 0.0;
  double supervisor_episode_us = 0.0;
  double speedup_ratio = 0.0;  // supervisor / learner
  int learner_calls = 0;
  int supervisor_calls = 0;
};

inline nlohmann::json timing_report_to_json(const TimingReport& t) {
  nlohmann::json j;
  j["learner_us_mean"] = t.learner_us_mean;
  j["learner_us_std"] = t.learner_us_std;
  j["supervisor_us_mean"] = t.supervisor_us_mean;
  j["supervisor_us_std"] = t.supervisor_us_std;
  j["learner_episode_us"] = t.learner_episode_us;
  j["supervisor_episode_us"] = t.supervisor_episode_us;
  j["speedup_ratio"] = t.speedup_ratio;
  j["learner_calls"] = t.learner_calls;
  j["supervisor_calls"] = t.supervisor_calls;
  return j;
}

namespace detail {

// Mean/std of per-call latency; calls are timed in chunks so that
// nanosecond-scale callees still produce stable samples.
inline std::pair<double, double> time_per_call_us(const std::function<void(int)>& call, int calls,
                                                  int chunk) {
  std::vector<double> samples;
  int done = 0;
  while (done < calls) {
    const int n = std::min(chunk, calls - done);
    auto t0 = std::chrono::steady_clock::now();
    for (int k = 0; k < n; ++k) call(done + k);
    auto t1 = std::chrono::steady_clock::now();
    samples.push_back(
        std::chrono::duration_cast<std::chrono::duration<double, std::micro>>(t1 - t0).count() /
        n);
    done += n;
  }
  double mean = 0;
  for (double s : samples) mean += s;
  mean /= samples.size();
  double var = 0;
  for (double s : samples) var += (s - mean) * (s - mean);
  var /= samples.size();
  return {mean, std::sqrt(var)};
}

}  // namespace detail

// Times learner and supervisor queries on identical states. The policy and
// (for MPC) the ensemble either come from a checkpoint directory or from a
// short embedded training run.
inline TimingReport timing_bench(const ExperimentConfig& cfg, const std::string& checkpoint_dir = "",
                                 int learner_calls = 1000, int supervisor_calls = 50) {
  PolicyParams params;
  SupervisorHandle sup;
  if (!checkpoint_dir.empty()) {
    const fs::path dir(checkpoint_dir);
    if (!fs::exists(dir / "params_final.json"))
      throw std::runtime_error("timing_bench: checkpoint missing params_final.json in " +
                               checkpoint_dir);
    params = params_from_json(nlohmann::json::parse(read_file(dir / "params_final.json")));
    if (cfg.supervisor.kind == SupervisorKind::MpcCem) {
      if (!fs::exists(dir / "ensemble_final.json"))
        throw std::runtime_error("timing_bench: checkpoint missing ensemble_final.json in " +
                                 checkpoint_dir);
      auto ens = std::make_shared<const DynamicsEnsemble>(
          ensemble_from_json(nlohmann::json::parse(read_file(dir / "ensemble_final.json"))));
      sup = make_mpc_supervisor(cfg.env, ens, cfg.supervisor.plan, cfg.rounds,
                                hash_combine(cfg.seeds.front(), 0x91a7));
    } else {
      sup = make_synthetic_supervisor(cfg.env, cfg.supervisor.schedule, cfg.rounds,
                                      cfg.supervisor.alternating, cfg.supervisor.kp,
                                      cfg.supervisor.kd);
    }
  } else {
    LoopResult res = run_loop(cfg.env, cfg.loop_config(), cfg.policy.make(cfg.env),
                              cfg.seeds.front());
    params = res.final_params;
    sup = res.final_supervisor;
  }

  // identical probe states for both sides, drawn from the learner's rollouts
  std::vector<Vector> states;
  int ep = 0;
  while (static_cast<int>(states.size()) < std::max(learner_calls, supervisor_calls)) {
    auto traj = rollout(
        cfg.env, [&](const Vector& s) { return act(params, s); },
        hash_combine(cfg.seeds.front(), 0xbe0c + ep));
    for (int t = 0; t < cfg.env.horizon; ++t) states.push_back(traj.states.row(t));
    ++ep;
  }

  TimingReport rep;
  rep.learner_calls = learner_calls;
  rep.supervisor_calls = supervisor_calls;
  volatile double sink = 0.0;
  auto [lmean, lstd] = detail::time_per_call_us(
      [&](int k) { sink = sink + act(params, states[k % states.size()]).sum(); }, learner_calls,
      100);
  auto [smean, sstd] = detail::time_per_call_us(
      [&](int k) { sink = sink + label(sup, states[k % states.size()]).sum(); }, supervisor_calls,
      1);
  rep.learner_us_mean = lmean;
  rep.learner_us_std = lstd;
  rep.supervisor_us_mean = smean;
  rep.supervisor_us_std = sstd;
  rep.learner_episode_us = lmean * cfg.env.horizon;
  rep.supervisor_episode_us = smean * cfg.env.horizon;
  rep.speedup_ratio = lmean > 0 ? smean / lmean : std::numeric_limits<double>::infinity();
  return rep;
}

// CLI verb `compare`: long-format merge of several run directories.
inline void compare_runs(const std::vector<std::string>& run_dirs, const fs::path& out_csv) {
  if (run_dirs.size() < 2)
    throw std::invalid_argument("compare: need at least two run directories");
  std::vector<CsvRow> rows;
  std::set<std::string> used_ids;
  int schema = -1;
  for (const auto& dir_str : run_dirs) {
    const fs::path dir(dir_str);
    nlohmann::json manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
    const int v = manifest.at("schema_version").get<int>();
    if (schema == -1) schema = v;
    if (v != schema)
      throw std::runtime_error("compare: schema version mismatch in " + dir_str + " (got " +
                               std::to_string(v) + ", expected " + std::to_string(schema) + ")");
    std::string run_id = manifest.at("run_id").get<std::string>();
    while (used_ids.count(run_id)) run_id += "~dup";
    used_ids.insert(run_id);

    auto rounds = read_csv(dir / "rounds.csv");
    for (std::size_t r = 1; r < rounds.size(); ++r) {
      const auto& row = rounds[r];
      for (std::size_t c = 1; c < row.size(); ++c) {
        if (row[c].empty()) continue;  // absent cells stay absent in long format
        rows.push_back({run_id, row[0], rounds[0][c], row[c]});
      }
    }
    if (fs::exists(dir / "regret.csv")) {
      auto regret = read_csv(dir / "regret.csv");
      for (std::size_t r = 1; r < regret.size(); ++r)
        rows.push_back({run_id, regret[r][0], regret[r][1], regret[r][2]});
    }
  }
  write_csv(out_csv, {"run_id", "round", "metric", "value"}, rows);
}

}  // namespace csil
