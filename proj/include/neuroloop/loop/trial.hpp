#pragma once

#include <chrono>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroloop/codec/decode.hpp"
#include "neuroloop/codec/encode.hpp"
#include "neuroloop/codec/layout.hpp"
#include "neuroloop/core/hash.hpp"
#include "neuroloop/core/log.hpp"
#include "neuroloop/env/gridworld.hpp"
#include "neuroloop/env/oracle.hpp"
#include "neuroloop/feedback.hpp"
#include "neuroloop/substrate/factory.hpp"

namespace neuroloop::loop {

enum class Mode : std::uint8_t { A, B, C };

struct ModeShape {
  int episodes;
  int steps;
  std::uint64_t rest_ms;  // between episodes
};

inline ModeShape mode_shape(Mode m) {
  switch (m) {
    case Mode::A:
      return {1, 30, 0};
    case Mode::B:
      return {1, 150, 0};
    case Mode::C:
      return {5, 30, 120000};
  }
  return {1, 30, 0};
}

inline std::string_view to_string(Mode m) {
  static constexpr std::string_view names[] = {"A", "B", "C"};
  return names[static_cast<int>(m)];
}

inline Mode mode_from_string(std::string_view s) {
  if (s == "A" || s == "a") return Mode::A;
  if (s == "B" || s == "b") return Mode::B;
  if (s == "C" || s == "c") return Mode::C;
  throw ConfigError("unknown task mode '" + std::string(s) + "' (expected A, B or C)");
}

// Where the calibration windows of later episodes come from in mode C.
enum class BaselineSchedule : std::uint8_t { overlap_rest, after_rest };

struct TrialSeeds {
  std::uint64_t env = 0;
  std::uint64_t substrate = 0;
  std::uint64_t decode_tiebreak = 0;
  std::uint64_t feedback = 0;

  static TrialSeeds from(std::uint64_t base) {
    return {derive_seed(base, 1), derive_seed(base, 2), derive_seed(base, 3), derive_seed(base, 4)};
  }
  friend bool operator==(const TrialSeeds&, const TrialSeeds&) = default;
};

struct TrialConfig {
  Mode mode = Mode::A;
  codec::EncodingParams encoding;
  feedback::FeedbackParams feedback;
  codec::RegionLayout layout = codec::centered_layout();
  env::EnvConfig env;
  substrate::SubstrateKind substrate;
  TrialSeeds seeds = TrialSeeds::from(0);
  double epsilon = codec::kDensityEpsilon;
  BaselineSchedule baseline_schedule = BaselineSchedule::overlap_rest;
  std::size_t calibration_windows = codec::kBaselineWindows;
  codec::DetectorConfig detector;
  bool realtime = false;

  void validate() const {
    encoding.validate();
    feedback.validate();
    layout.validate();
    env.validate();
    substrate.validate();
    if (calibration_windows < 1 || calibration_windows > codec::kBaselineWindows)
      throw ConfigError("calibration_windows must be in [1, 60]");
    if (!(epsilon >= 0)) throw ConfigError("epsilon must be non-negative");
  }
};

struct StepRecord {
  int sensor = 0;
  double frequency_hz = 0.0;
  bool clamped = false;
  env::Action action = env::Action::forward;
  double reward = 0.0;
  env::Event event = env::Event::none;
  env::AgentPose pose;
  env::Cell food;
  std::array<std::uint64_t, 3> counts{};
  std::array<double, 3> density{};
  bool tie = false;
  std::vector<std::uint32_t> channel_counts;
  feedback::FeedbackKind feedback = feedback::FeedbackKind::plasticity;
  std::uint64_t feedback_spikes = 0;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct EpisodeRecord {
  std::vector<StepRecord> steps;
  double total_reward = 0.0;
  double oracle = 0.0;
  int food = 0;
  int collisions = 0;
  codec::BaselineRates baseline;
  std::uint64_t calibration_extension_ms = 0;

  friend bool operator==(const EpisodeRecord&, const EpisodeRecord&) = default;
};

struct TrialResult {
  nlohmann::json config;
  std::string config_hash;
  TrialSeeds seeds;
  std::vector<EpisodeRecord> episodes;
  std::uint64_t virtual_ms = 0;
  double wall_ms = 0.0;  // informational; not serialized or compared

  friend bool operator==(const TrialResult& a, const TrialResult& b) {
    return a.config == b.config && a.config_hash == b.config_hash && a.seeds == b.seeds &&
           a.episodes == b.episodes && a.virtual_ms == b.virtual_ms;
  }
};

/// Mean over episodes of reward / oracle.
inline double score(std::span<const double> rewards, std::span<const double> oracles) {
  if (rewards.size() != oracles.size() || rewards.empty())
    throw PreconditionError("score needs one oracle per episode");
  double s = 0.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (!(oracles[i] > 0.0)) throw PreconditionError("oracle reward must be positive");
    s += rewards[i] / oracles[i];
  }
  return s / static_cast<double>(rewards.size());
}

inline double score(const TrialResult& r) {
  std::vector<double> rewards, oracles;
  for (const auto& e : r.episodes) {
    rewards.push_back(e.total_reward);
    oracles.push_back(e.oracle);
  }
  return score(rewards, oracles);
}

inline double total_reward(const TrialResult& r) {
  double s = 0;
  for (const auto& e : r.episodes) s += e.total_reward;
  return s;
}

// Virtual duration of a trial as a function of its configuration alone.
inline std::uint64_t expected_virtual_ms(const TrialConfig& cfg) {
  const auto shape = mode_shape(cfg.mode);
  const std::uint64_t period = cfg.encoding.interaction_ms();
  const std::uint64_t calib = cfg.calibration_windows * period;
  const std::uint64_t per_step = period + cfg.feedback.duration_ms(period);
  std::uint64_t total = calib + static_cast<std::uint64_t>(shape.episodes * shape.steps) * per_step;
  for (int e = 1; e < shape.episodes; ++e) {
    if (cfg.baseline_schedule == BaselineSchedule::overlap_rest && calib <= shape.rest_ms)
      total += shape.rest_ms;
    else
      total += shape.rest_ms + calib;
  }
  return total;
}

inline nlohmann::json config_json(const TrialConfig& c);

namespace detail {

inline void pace(bool realtime, std::uint64_t ms) {
  if (realtime) std::this_thread::sleep_for(std::chrono::milliseconds(ms));
}

inline codec::BaselineRates calibrate(substrate::Substrate& sub, const TrialConfig& cfg, std::uint64_t period) {
  std::vector<codec::WindowCounts> windows;
  windows.reserve(cfg.calibration_windows);
  for (std::size_t w = 0; w < cfg.calibration_windows; ++w) {
    windows.push_back(codec::count_window(codec::to_spikes(sub.spontaneous(period), cfg.detector), cfg.layout));
    pace(cfg.realtime, period);
  }
  return codec::update_baseline(windows);
}

}  // namespace detail

/// Runs one trial against `sub`. The substrate is driven in place and keeps
/// whatever state the trial leaves behind.
inline TrialResult run_trial(const TrialConfig& cfg, substrate::Substrate& sub) {
  cfg.validate();
  if (sub.channels() != cfg.layout.channels)
    throw ContractError("substrate has " + std::to_string(sub.channels()) + " channels, layout has " +
                        std::to_string(cfg.layout.channels));
  const auto wall_start = std::chrono::steady_clock::now();
  const auto shape = mode_shape(cfg.mode);
  const std::uint64_t period = cfg.encoding.interaction_ms();
  const std::uint64_t calib_ms = cfg.calibration_windows * period;
  feedback::FeedbackParams fb = cfg.feedback;
  fb.inherit(cfg.encoding);

  TrialResult result;
  result.config = config_json(cfg);
  result.config_hash = digest_hex(result.config.dump());
  result.seeds = cfg.seeds;
  const std::uint64_t clock0 = sub.clock_ms();

  Rng decode_rng(cfg.seeds.decode_tiebreak);
  Rng feedback_rng(cfg.seeds.feedback);
  env::EnvConfig env_cfg = cfg.env;
  env_cfg.seed = cfg.seeds.env;
  const double oracle = env::oracle_max_reward(env_cfg, cfg.seeds.env, shape.steps);
  const auto reinforcing = feedback::reinforcing_feedback(period, cfg.layout, fb);

  for (int ep = 0; ep < shape.episodes; ++ep) {
    EpisodeRecord episode;
    episode.oracle = oracle;
    if (ep > 0) {
      if (cfg.baseline_schedule == BaselineSchedule::overlap_rest && calib_ms <= shape.rest_ms) {
        sub.rest(shape.rest_ms - calib_ms);
        detail::pace(cfg.realtime, shape.rest_ms - calib_ms);
      } else {
        sub.rest(shape.rest_ms);
        detail::pace(cfg.realtime, shape.rest_ms);
        if (cfg.baseline_schedule == BaselineSchedule::overlap_rest) {
          episode.calibration_extension_ms = calib_ms;
          log::info("calibration of ", calib_ms, " ms does not fit the ", shape.rest_ms,
                    " ms rest; inter-episode gap extended");
        }
      }
    }
    episode.baseline = detail::calibrate(sub, cfg, period);

    env::EnvState state = env::reset(env_cfg);
    for (int t = 0; t < shape.steps; ++t) {
      StepRecord rec;
      rec.sensor = env::sense(state);
      const auto rate = codec::rate_frequency(rec.sensor, cfg.encoding);
      rec.frequency_hz = rate.hz;
      rec.clamped = rate.clamped;

      const auto stim = codec::encode_step(rec.sensor, cfg.encoding, cfg.layout);
      const auto spikes = codec::to_spikes(sub.stimulate(stim, period), cfg.detector);
      detail::pace(cfg.realtime, period);
      const auto window = codec::count_window(spikes, cfg.layout);
      const auto decoded = codec::count_decode(window.regions, episode.baseline.regions, decode_rng, cfg.epsilon);
      rec.action = decoded.action;
      rec.counts = decoded.counts;
      rec.density = decoded.density;
      rec.tie = decoded.tie;
      rec.channel_counts = window.channels;

      const auto out = env::step(state, rec.action);
      rec.reward = out.reward;
      rec.event = out.event;
      rec.pose = state.pose;
      rec.food = state.food;

      rec.feedback = feedback::select_feedback(out.reward);
      const auto fstim = rec.feedback == feedback::FeedbackKind::reinforcing
                             ? reinforcing
                             : feedback::plasticity_feedback(period, cfg.layout, fb, feedback_rng);
      const auto fspikes = codec::to_spikes(sub.stimulate(fstim, fstim.bins()), cfg.detector);
      detail::pace(cfg.realtime, fstim.bins());
      rec.feedback_spikes = fspikes.spikes.total();
      episode.steps.push_back(std::move(rec));
    }
    episode.total_reward = state.cumulative_reward;
    episode.food = state.food_count;
    episode.collisions = state.collisions;
    result.episodes.push_back(std::move(episode));
  }
  result.virtual_ms = sub.clock_ms() - clock0;
  result.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall_start).count();
  return result;
}

/// Builds the configured substrate from the substrate seed and runs the trial.
inline TrialResult run_trial(const TrialConfig& cfg) {
  cfg.validate();
  auto sub = substrate::make_substrate(cfg.substrate, cfg.layout, cfg.seeds.substrate, &cfg.encoding);
  return run_trial(cfg, *sub);
}

// --- serialization ------------------------------------------------------

inline void to_json(nlohmann::json& j, const TrialSeeds& s) {
  j = nlohmann::json{{"env", s.env}, {"substrate", s.substrate}, {"decode_tiebreak", s.decode_tiebreak},
                     {"feedback", s.feedback}};
}
inline void from_json(const nlohmann::json& j, TrialSeeds& s) {
  s.env = j.value("env", s.env);
  s.substrate = j.value("substrate", s.substrate);
  s.decode_tiebreak = j.value("decode_tiebreak", s.decode_tiebreak);
  s.feedback = j.value("feedback", s.feedback);
}

inline nlohmann::json config_json(const TrialConfig& c) {
  return nlohmann::json{{"mode", to_string(c.mode)},
                        {"encoding", c.encoding},
                        {"feedback", c.feedback},
                        {"layout", c.layout},
                        {"env", c.env},
                        {"substrate", c.substrate},
                        {"seeds", c.seeds},
                        {"epsilon", c.epsilon},
                        {"baseline_schedule",
                         c.baseline_schedule == BaselineSchedule::overlap_rest ? "overlap_rest" : "after_rest"},
                        {"calibration_windows", c.calibration_windows},
                        {"detector", c.detector},
                        {"realtime", c.realtime}};
}

inline void to_json(nlohmann::json& j, const TrialConfig& c) { j = config_json(c); }

// Fields missing from `j` keep their current values in `c`.
inline void merge_config(const nlohmann::json& j, TrialConfig& c) {
  if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("encoding")) {
    nlohmann::json e = c.encoding;
    e.update(j.at("encoding"));
    c.encoding = e.get<codec::EncodingParams>();
  }
  if (j.contains("feedback")) {
    nlohmann::json f = c.feedback;
    f.update(j.at("feedback"));
    c.feedback = f.get<feedback::FeedbackParams>();
  }
  if (j.contains("layout")) c.layout = j.at("layout").get<codec::RegionLayout>();
  if (j.contains("env")) {
    nlohmann::json e = c.env;
    e.update(j.at("env"));
    c.env = e.get<env::EnvConfig>();
  }
  if (j.contains("substrate")) c.substrate = j.at("substrate").get<substrate::SubstrateKind>();
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    if (s.is_number_unsigned() || s.is_number_integer())
      c.seeds = TrialSeeds::from(s.get<std::uint64_t>());
    else
      c.seeds = s.get<TrialSeeds>();
  }
  c.epsilon = j.value("epsilon", c.epsilon);
  if (j.contains("baseline_schedule")) {
    const auto s = j.at("baseline_schedule").get<std::string>();
    if (s == "overlap_rest")
      c.baseline_schedule = BaselineSchedule::overlap_rest;
    else if (s == "after_rest")
      c.baseline_schedule = BaselineSchedule::after_rest;
    else
      throw ConfigError("unknown baseline_schedule '" + s + "'");
  }
  c.calibration_windows = j.value("calibration_windows", c.calibration_windows);
  if (j.contains("detector")) c.detector = j.at("detector").get<codec::DetectorConfig>();
  c.realtime = j.value("realtime", c.realtime);
}

inline void from_json(const nlohmann::json& j, TrialConfig& c) {
  c = TrialConfig{};
  merge_config(j, c);
}

inline nlohmann::json step_json(int episode, int index, const StepRecord& s) {
  nlohmann::json j{{"type", "step"},
                   {"episode", episode},
                   {"step", index},
                   {"sensor", s.sensor},
                   {"frequency_hz", s.frequency_hz},
                   {"clamped", s.clamped},
                   {"action", env::to_string(s.action)},
                   {"reward", s.reward},
                   {"event", env::to_string(s.event)},
                   {"pose", s.pose.cell},
                   {"heading", env::to_string(s.pose.heading)},
                   {"food", s.food},
                   {"counts", s.counts},
                   {"density", s.density},
                   {"tie", s.tie},
                   {"feedback", feedback::to_string(s.feedback)},
                   {"feedback_spikes", s.feedback_spikes}};
  if (!s.channel_counts.empty()) j["channel_counts"] = s.channel_counts;
  return j;
}

inline StepRecord step_from_json(const nlohmann::json& j) {
  StepRecord s;
  s.sensor = j.at("sensor").get<int>();
  s.frequency_hz = j.value("frequency_hz", 0.0);
  s.clamped = j.value("clamped", false);
  s.action = env::action_from_string(j.at("action").get<std::string>());
  s.reward = j.at("reward").get<double>();
  s.event = env::event_from_string(j.at("event").get<std::string>());
  s.pose.cell = j.at("pose").get<env::Cell>();
  s.pose.heading = env::heading_from_string(j.at("heading").get<std::string>());
  s.food = j.at("food").get<env::Cell>();
  s.counts = j.value("counts", std::array<std::uint64_t, 3>{});
  s.density = j.value("density", std::array<double, 3>{});
  s.tie = j.value("tie", false);
  s.channel_counts = j.value("channel_counts", std::vector<std::uint32_t>{});
  s.feedback = feedback::feedback_kind_from_string(j.at("feedback").get<std::string>());
  s.feedback_spikes = j.value("feedback_spikes", std::uint64_t{0});
  return s;
}

/// JSONL: a config line, one line per step, one per episode and a summary.
inline void write_trial_jsonl(std::ostream& os, const TrialResult& r) {
  nlohmann::json head{{"type", "config"}, {"config", r.config}, {"config_hash", r.config_hash}};
  os << head.dump() << '\n';
  for (std::size_t e = 0; e < r.episodes.size(); ++e) {
    const auto& ep = r.episodes[e];
    for (std::size_t t = 0; t < ep.steps.size(); ++t)
      os << step_json(static_cast<int>(e), static_cast<int>(t), ep.steps[t]).dump() << '\n';
    nlohmann::json ej{{"type", "episode"},
                      {"episode", e},
                      {"steps", ep.steps.size()},
                      {"total_reward", ep.total_reward},
                      {"oracle", ep.oracle},
                      {"food", ep.food},
                      {"collisions", ep.collisions},
                      {"baseline", ep.baseline},
                      {"calibration_extension_ms", ep.calibration_extension_ms}};
    os << ej.dump() << '\n';
  }
  nlohmann::json summary{{"type", "summary"},
                         {"score", r.episodes.empty() ? 0.0 : score(r)},
                         {"total_reward", total_reward(r)},
                         {"episodes", r.episodes.size()},
                         {"virtual_ms", r.virtual_ms},
                         {"config_hash", r.config_hash},
                         {"seeds", r.seeds}};
  os << summary.dump() << '\n';
}

inline TrialResult read_trial_jsonl(std::istream& in, const std::string& name = "trial") {
  TrialResult r;
  std::vector<std::vector<StepRecord>> steps;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "config") {
        r.config = j.at("config");
        r.config_hash = j.value("config_hash", std::string{});
      } else if (type == "step") {
        const auto e = j.at("episode").get<std::size_t>();
        if (steps.size() <= e) steps.resize(e + 1);
        steps[e].push_back(step_from_json(j));
      } else if (type == "episode") {
        const auto e = j.at("episode").get<std::size_t>();
        if (r.episodes.size() <= e) r.episodes.resize(e + 1);
        auto& ep = r.episodes[e];
        ep.total_reward = j.at("total_reward").get<double>();
        ep.oracle = j.at("oracle").get<double>();
        ep.food = j.value("food", 0);
        ep.collisions = j.value("collisions", 0);
        if (j.contains("baseline") && !j.at("baseline").is_null()) ep.baseline = j.at("baseline").get<codec::BaselineRates>();
        ep.calibration_extension_ms = j.value("calibration_extension_ms", std::uint64_t{0});
      } else if (type == "summary") {
        r.virtual_ms = j.value("virtual_ms", std::uint64_t{0});
        if (j.contains("seeds")) r.seeds = j.at("seeds").get<TrialSeeds>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError(name + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (steps.size() > r.episodes.size()) throw IoError(name + ": step records without episode records");
  for (std::size_t e = 0; e < steps.size(); ++e) r.episodes[e].steps = std::move(steps[e]);
  return r;
}

}  // namespace neuroloop::loop
