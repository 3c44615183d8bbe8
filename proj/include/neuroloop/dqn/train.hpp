#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroloop/codec/encode.hpp"
#include "neuroloop/core/hash.hpp"
#include "neuroloop/dqn/qnet.hpp"
#include "neuroloop/env/gridworld.hpp"
#include "neuroloop/env/oracle.hpp"
#include "neuroloop/feedback.hpp"
#include "neuroloop/core/log.hpp"
#include "neuroloop/loop/trial.hpp"
#include "neuroloop/optimizer/runner.hpp"

namespace neuroloop::dqn {

struct DqnHyperParams {
  double learning_rate = 0.01;
  int target_update_freq = 100;  // steps
  int train_freq = 1;           // steps between updates
  double final_epsilon = 0.02;
  double exploration_horizon = 0.2;  // fraction of total steps
  double gamma = 0.99;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
    if (target_update_freq < 1) throw ConfigError("target_update_freq must be at least 1");
    if (train_freq < 1) throw ConfigError("train_freq must be at least 1");
    if (!(final_epsilon >= 0.0 && final_epsilon <= 1.0)) throw ConfigError("final_epsilon must be in [0, 1]");
    if (!(exploration_horizon > 0.0 && exploration_horizon <= 1.0))
      throw ConfigError("exploration_horizon must be in (0, 1]");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0, 1]");
  }

  friend bool operator==(const DqnHyperParams&, const DqnHyperParams&) = default;
};

/// Linear from 1 to final_epsilon over horizon * total steps, then flat.
inline double epsilon_at(std::size_t step, std::size_t total_steps, const DqnHyperParams& hp) {
  const double horizon = hp.exploration_horizon * static_cast<double>(total_steps);
  const auto t = static_cast<double>(step);
  if (t >= horizon) return hp.final_epsilon;
  return 1.0 + (hp.final_epsilon - 1.0) * t / horizon;
}

struct Transition {
  int sensor = 0;
  std::size_t action = 0;
  double reward = 0.0;
  int next_sensor = 0;
};

inline double td_target(const QNet& target, const Transition& t, double gamma) {
  const auto q = qnet_forward(target, one_hot(t.next_sensor));
  return t.reward + gamma * std::max({q[0], q[1], q[2]});
}

/// Online learner: every transition is used exactly once. With
/// train_freq = k the k transitions seen since the last update are averaged
/// into one gradient step.
class Learner {
 public:
  Learner(QNet init, DqnHyperParams hp) : online_(init), target_(init), hp_(hp) { hp_.validate(); }

  const QNet& online() const { return online_; }
  const QNet& target() const { return target_; }
  std::size_t steps() const { return steps_; }

  // Returns the mean loss of the update when one was applied, otherwise -1.
  double learn_step(const Transition& t) {
    pending_.push_back(t);
    ++steps_;
    double loss_out = -1.0;
    if (steps_ % static_cast<std::size_t>(hp_.train_freq) == 0) {
      QNet grad{};
      double total = 0.0;
      for (const auto& p : pending_) {
        const double y = td_target(target_, p, hp_.gamma);
        auto [g, l] = loss_gradient(online_, one_hot(p.sensor), p.action, y);
        axpy(grad, g, 1.0);
        total += l;
      }
      const double n = static_cast<double>(pending_.size());
      loss_out = total / n;
      if (!std::isfinite(loss_out))
        throw TrainingError("non-finite loss " + std::to_string(loss_out) + " at step " + std::to_string(steps_) +
                            " (learning_rate " + std::to_string(hp_.learning_rate) + ", last reward " +
                            std::to_string(t.reward) + ")");
      axpy(online_, grad, -hp_.learning_rate / n);
      if (!online_.finite())
        throw TrainingError("non-finite weights at step " + std::to_string(steps_) + " (learning_rate " +
                            std::to_string(hp_.learning_rate) + ")");
      pending_.clear();
    }
    if (steps_ % static_cast<std::size_t>(hp_.target_update_freq) == 0) target_ = online_;
    return loss_out;
  }

 private:
  QNet online_;
  QNet target_;
  DqnHyperParams hp_;
  std::vector<Transition> pending_;
  std::size_t steps_ = 0;
};

struct DqnRun {
  loop::TrialResult result;
  QNet net;
  std::vector<double> losses;  // one per applied update
};

inline nlohmann::json dqn_config_json(const env::EnvConfig& env, const DqnHyperParams& hp, std::size_t total_steps,
                                      std::uint64_t seed, const std::string& agent) {
  return {{"agent", agent},
          {"env", env},
          {"hyperparameters",
           {{"learning_rate", hp.learning_rate},
            {"target_update_freq", hp.target_update_freq},
            {"train_freq", hp.train_freq},
            {"final_epsilon", hp.final_epsilon},
            {"exploration_horizon", hp.exploration_horizon},
            {"gamma", hp.gamma}}},
          {"total_steps", total_steps},
          {"seed", seed}};
}

namespace detail {

// Plays one episode of `total_steps` actions, choosing with `choose(sensor,
// step)` and reporting each transition to `observe`.
template <typename Choose, typename Observe>
loop::TrialResult play(const env::EnvConfig& env_cfg, std::size_t total_steps, std::uint64_t seed,
                       nlohmann::json config, Choose&& choose, Observe&& observe) {
  if (total_steps < 1) throw PreconditionError("total_steps must be at least 1");
  env::EnvConfig cfg = env_cfg;
  cfg.seed = derive_seed(seed, 1);
  loop::TrialResult r;
  r.config = std::move(config);
  r.config_hash = digest_hex(r.config.dump());
  r.seeds = {cfg.seed, 0, derive_seed(seed, 2), 0};
  loop::EpisodeRecord ep;
  ep.oracle = env::oracle_max_reward(cfg, cfg.seed, static_cast<int>(total_steps));
  env::EnvState s = env::reset(cfg);
  for (std::size_t t = 0; t < total_steps; ++t) {
    loop::StepRecord rec;
    rec.sensor = env::sense(s);
    const std::size_t a = choose(rec.sensor, t);
    rec.action = static_cast<env::Action>(a);
    const auto out = env::step(s, rec.action);
    rec.reward = out.reward;
    rec.event = out.event;
    rec.pose = s.pose;
    rec.food = s.food;
    rec.feedback = feedback::select_feedback(out.reward);
    observe(Transition{rec.sensor, a, out.reward, out.sensor});
    ep.steps.push_back(std::move(rec));
  }
  ep.total_reward = s.cumulative_reward;
  ep.food = s.food_count;
  ep.collisions = s.collisions;
  r.episodes.push_back(std::move(ep));
  return r;
}

}  // namespace detail

/// Trains online for `total_steps` environment interactions in a single
/// episode and returns the run in the trial result schema.
inline DqnRun train_dqn(const env::EnvConfig& env_cfg, const DqnHyperParams& hp, std::size_t total_steps,
                        std::uint64_t seed) {
  hp.validate();
  Rng init_rng(derive_seed(seed, 3));
  Rng act_rng(derive_seed(seed, 2));
  Learner learner(QNet::random(init_rng), hp);
  DqnRun run;
  run.result = detail::play(
      env_cfg, total_steps, seed, dqn_config_json(env_cfg, hp, total_steps, seed, "dqn"),
      [&](int sensor, std::size_t t) {
        return act(qnet_forward(learner.online(), one_hot(sensor)), epsilon_at(t, total_steps, hp), act_rng);
      },
      [&](const Transition& tr) {
        const double l = learner.learn_step(tr);
        if (l >= 0.0) run.losses.push_back(l);
      });
  run.net = learner.online();
  return run;
}

/// Uniformly random actions on the same environment stream as train_dqn.
inline loop::TrialResult random_policy(const env::EnvConfig& env_cfg, std::size_t total_steps, std::uint64_t seed) {
  Rng act_rng(derive_seed(seed, 2));
  return detail::play(
      env_cfg, total_steps, seed, dqn_config_json(env_cfg, DqnHyperParams{}, total_steps, seed, "random_policy"),
      [&](int, std::size_t) { return static_cast<std::size_t>(act_rng.below(kOutputs)); }, [](const Transition&) {});
}

inline codec::ParamMap to_param_map(const DqnHyperParams& hp) {
  return {{"learning_rate", hp.learning_rate},
          {"target_update_freq", hp.target_update_freq},
          {"train_freq", hp.train_freq},
          {"final_epsilon", hp.final_epsilon},
          {"exploration_horizon", hp.exploration_horizon},
          {"gamma", hp.gamma}};
}

inline DqnHyperParams apply_params(DqnHyperParams hp, const codec::ParamMap& p) {
  for (const auto& [k, v] : p) {
    if (k == "learning_rate")
      hp.learning_rate = v;
    else if (k == "target_update_freq")
      hp.target_update_freq = static_cast<int>(std::llround(v));
    else if (k == "train_freq")
      hp.train_freq = static_cast<int>(std::llround(v));
    else if (k == "final_epsilon")
      hp.final_epsilon = v;
    else if (k == "exploration_horizon")
      hp.exploration_horizon = v;
    else if (k == "gamma")
      hp.gamma = v;
    else
      throw ConfigError("unknown DQN hyperparameter '" + k + "'");
  }
  hp.validate();
  return hp;
}

/// Random search space over the five screened hyperparameters (gamma fixed).
inline std::vector<codec::ParamMap> sample_hyperparameters(std::size_t n, std::uint64_t seed,
                                                           const DqnHyperParams& base = {}) {
  Rng rng(seed);
  std::vector<codec::ParamMap> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({{"learning_rate", std::pow(10.0, rng.uniform(-4.0, -1.0))},
                   {"target_update_freq", static_cast<double>(1 + rng.below(200))},
                   {"train_freq", static_cast<double>(1 + rng.below(8))},
                   {"final_epsilon", rng.uniform(0.0, 0.2)},
                   {"exploration_horizon", rng.uniform(0.05, 1.0)},
                   {"gamma", base.gamma}});
  }
  return out;
}

/// Optimizer runner for hyperparameter search: the assignment's params are
/// applied on top of `base` and its substrate seed seeds the training run.
/// A diverged run is scored as the random policy on the same seed.
inline optimizer::Runner dqn_runner(env::EnvConfig env_cfg, DqnHyperParams base, std::size_t total_steps) {
  return [env_cfg, base, total_steps](const optimizer::Assignment& a) {
    const auto hp = apply_params(base, a.params);
    const auto seed = a.seeds.substrate;
    try {
      const auto run = train_dqn(env_cfg, hp, total_steps, seed);
      return optimizer::RunOutcome{loop::score(run.result), optimizer::result_digest(run.result)};
    } catch (const TrainingError& e) {
      log::warn("trial ", a.trial_id, " diverged, scored as random policy: ", e.what());
      const auto r = random_policy(env_cfg, total_steps, seed);
      return optimizer::RunOutcome{loop::score(r), optimizer::result_digest(r)};
    }
  };
}

inline void save_checkpoint(const std::string& path, const QNet& net, const DqnHyperParams& hp) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out << nlohmann::json{{"net", net}, {"hyperparameters", to_param_map(hp)}}.dump(2) << '\n';
}

inline QNet load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint '" + path + "'");
  try {
    return nlohmann::json::parse(in).at("net").get<QNet>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint '" + path + "': " + e.what());
  }
}

}  // namespace neuroloop::dqn
