#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "neuroloop/neuroloop.hpp"

namespace nl = neuroloop;
using nlohmann::json;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kConfig = 2;
constexpr int kRuntime = 3;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw nl::ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw nl::ConfigError("malformed config file '" + path + "': " + e.what());
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw nl::IoError("cannot write '" + path + "'");
  return out;
}

// "name=value,name=value"
nl::codec::ParamMap parse_param_list(const std::string& text) {
  nl::codec::ParamMap out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw nl::ConfigError("expected name=value, got '" + item + "'");
    try {
      out[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw nl::ConfigError("bad value in '" + item + "'");
    }
  }
  return out;
}

// Default planted optimum for the oracle substrate: a stage-1 grid point.
nl::codec::ParamMap default_planted() {
  return {{"min_frequency", 4},   {"max_frequency", 60}, {"amplitude", 2.5},
          {"pulse_width", 40},    {"tick_rate", 4},      {"ticks_per_step", 2}};
}

struct EnvOptions {
  std::optional<int> width, height;
  std::optional<double> lambda, shaping;

  void add(CLI::App* app) {
    app->add_option("--grid-width", width, "Gridworld width including the barrier ring (cells)");
    app->add_option("--grid-height", height, "Gridworld height including the barrier ring (cells)");
    app->add_option("--lambda", lambda, "Odor decay per cell of distance (1/cell)");
    app->add_option("--shaping", shaping, "Scale of the odor-gradient shaping reward (reward units)");
  }

  void apply(nl::env::EnvConfig& e) const {
    if (width) e.width = *width;
    if (height) e.height = *height;
    if (lambda) e.lambda = *lambda;
    if (shaping) e.shaping_scale = *shaping;
  }
};

// Flags shared by every command that builds a trial configuration.
// Precedence: flag > --config file > built-in default.
struct TrialOptions {
  std::string config_path;
  std::optional<std::string> mode, substrate, replay_file, planted, baseline_schedule;
  std::optional<double> oracle_quality, random_rate;
  std::optional<std::uint64_t> seed;
  std::optional<double> f_min, f_max, amplitude, pulse_width, tick_rate;
  std::optional<int> ticks_per_step;
  std::optional<std::size_t> calibration_windows;
  bool realtime = false;
  EnvOptions env;

  void add(CLI::App* app, bool with_seed = true, bool with_mode = true) {
    app->add_option("--config", config_path, "Trial configuration file (JSON)")->check(CLI::ExistingFile);
    if (with_mode) app->add_option("--mode", mode, "Experimental mode: A (1x30 steps), B (1x150), C (5x30, 2 min rests)");
    app->add_option("--substrate", substrate, "Substrate: spiking, random, replay or oracle");
    app->add_option("--replay-file", replay_file, "Spike recording for the replay substrate (JSONL)");
    app->add_option("--planted", planted, "Oracle optimum as name=value,... (encoding parameter units)");
    app->add_option("--oracle-quality", oracle_quality, "Fixed oracle reliability q in [0, 1] (probability)");
    app->add_option("--random-rate", random_rate, "Poisson rate of the random substrate (Hz per channel)");
    if (with_seed) app->add_option("--seed", seed, "Base seed for the env, substrate, decoder and feedback streams");
    app->add_option("--min-frequency", f_min, "Rate-encoding minimum frequency (Hz)");
    app->add_option("--max-frequency", f_max, "Rate-encoding maximum frequency (Hz)");
    app->add_option("--amplitude", amplitude, "Stimulation amplitude (uA)");
    app->add_option("--pulse-width", pulse_width, "Stimulation pulse width (us)");
    app->add_option("--tick-rate", tick_rate, "Encoding ticks per second (Hz)");
    app->add_option("--ticks-per-step", ticks_per_step, "Ticks per environment step (count)");
    app->add_option("--baseline-schedule", baseline_schedule, "Mode C calibration: overlap_rest or after_rest");
    app->add_option("--calibration-windows", calibration_windows, "Baseline calibration windows (count, 1-60)");
    app->add_flag("--realtime", realtime, "Pace the loop in wall-clock time (ms per virtual ms)");
    env.add(app);
  }

  nl::loop::TrialConfig build() const {
    nl::loop::TrialConfig c;
    if (!config_path.empty()) nl::loop::merge_config(read_json_file(config_path), c);
    if (mode) c.mode = nl::loop::mode_from_string(*mode);
    if (substrate) c.substrate.kind = nl::substrate::kind_from_string(*substrate);
    if (replay_file) c.substrate.replay_path = *replay_file;
    if (planted) c.substrate.oracle.planted = parse_param_list(*planted);
    if (oracle_quality) c.substrate.oracle.quality = *oracle_quality;
    if (random_rate) c.substrate.random.rate_hz = *random_rate;
    if (c.substrate.kind == nl::substrate::Kind::oracle && c.substrate.oracle.planted.empty() &&
        !c.substrate.oracle.quality)
      c.substrate.oracle.planted = default_planted();
    if (seed) c.seeds = nl::loop::TrialSeeds::from(*seed);
    if (f_min) c.encoding.f_min = *f_min;
    if (f_max) c.encoding.f_max = *f_max;
    if (amplitude) c.encoding.amplitude = *amplitude;
    if (pulse_width) c.encoding.pulse_width = *pulse_width;
    if (tick_rate) c.encoding.tick_rate = *tick_rate;
    if (ticks_per_step) c.encoding.ticks_per_step = *ticks_per_step;
    if (baseline_schedule) {
      if (*baseline_schedule == "overlap_rest")
        c.baseline_schedule = nl::loop::BaselineSchedule::overlap_rest;
      else if (*baseline_schedule == "after_rest")
        c.baseline_schedule = nl::loop::BaselineSchedule::after_rest;
      else
        throw nl::ConfigError("unknown baseline schedule '" + *baseline_schedule + "'");
    }
    if (calibration_windows) c.calibration_windows = *calibration_windows;
    if (realtime) c.realtime = true;
    env.apply(c.env);
    c.validate();
    return c;
  }
};

void print_json(const json& j) { std::cout << j.dump() << std::endl; }

// ---- trial run ----

struct TrialRun {
  TrialOptions trial;
  std::string out;

  void add(CLI::App* app) {
    trial.add(app);
    app->add_option("--out", out, "Trial result file (JSONL)")->required();
  }

  void run() const {
    const auto cfg = trial.build();
    const auto result = nl::loop::run_trial(cfg);
    auto os = open_out(out);
    nl::loop::write_trial_jsonl(os, result);
    if (!os) throw nl::IoError("write to '" + out + "' failed");
    print_json({{"score", nl::loop::score(result)},
                {"total_reward", nl::loop::total_reward(result)},
                {"virtual_ms", result.virtual_ms},
                {"out", out}});
  }
};

// ---- study options shared by sweep run and serve ----

struct StudyOptions {
  std::string stage = "stage1";
  std::size_t replicates = 1;
  std::size_t quorum = nl::optimizer::kDefaultQuorum;
  std::uint64_t schedule_seed = 0;
  std::optional<double> timeout_s;
  std::string combos_path;
  std::string log_path;
  std::string label;

  void add(CLI::App* app) {
    app->add_option("--stage", stage, "Grid to screen: stage1 (1,296 combos) or stage2 (64 combos)");
    app->add_option("--combos", combos_path, "Screen these parameter sets instead (JSON array or shortlist file)")
        ->check(CLI::ExistingFile);
    app->add_option("--replicates", replicates, "Replicates per parameter set (count)");
    app->add_option("--quorum", quorum, "Distinct clients required per aggregate (count)");
    app->add_option("--schedule-seed", schedule_seed, "Seed of the dispatch order and per-trial seeds");
    app->add_option("--timeout", timeout_s, "Lease timeout per trial (s); default 10x one trial's virtual time");
    app->add_option("--log", log_path, "Study log (JSONL); an existing log for the same study is resumed")->required();
    app->add_option("--label", label, "Study label recorded in the log");
  }

  std::vector<nl::codec::ParamMap> combos() const {
    if (combos_path.empty()) return nl::optimizer::build_grid(nl::optimizer::stage_from_string(stage)).combos();
    const auto j = read_json_file(combos_path);
    std::vector<nl::codec::ParamMap> out;
    const json& list = j.is_object() && j.contains("selected") ? j.at("selected") : j;
    if (!list.is_array()) throw nl::ConfigError("'" + combos_path + "' is not a list of parameter sets");
    for (const auto& e : list) out.push_back(e.contains("params") ? e.at("params").get<nl::codec::ParamMap>()
                                                                  : e.get<nl::codec::ParamMap>());
    if (out.empty()) throw nl::ConfigError("'" + combos_path + "' lists no parameter sets");
    return out;
  }

  nl::optimizer::StudySpec spec(const nl::loop::TrialConfig& base) const {
    if (replicates < 1) throw nl::ConfigError("replicates must be at least 1");
    if (quorum < 1) throw nl::ConfigError("quorum must be at least 1");
    nl::optimizer::StudySpec s;
    s.label = label.empty() ? stage : label;
    s.units = nl::optimizer::schedule(combos(), replicates, schedule_seed);
    s.quorum = quorum;
    s.seed = schedule_seed;
    s.mode = base.mode;
    s.timeout_s = timeout_s ? *timeout_s : nl::optimizer::default_timeout_s(base, s.units);
    if (!(s.timeout_s > 0)) throw nl::ConfigError("timeout must be positive");
    s.config = nl::loop::config_json(base);
    for (const auto& u : s.units) nl::codec::apply_params(base.encoding, u.params).validate();
    return s;
  }
};

// Optional selection step after a sweep.
struct SelectOptions {
  std::vector<std::string> baselines;
  std::string out;
  double pct = nl::optimizer::kSelectionPercentile;
  std::string consistency = "all";

  void add(CLI::App* app) {
    app->add_option("--baseline", baselines,
                    "Baseline score file per group (study log or score JSONL); enables selection")
        ->check(CLI::ExistingFile);
    app->add_option("--select-out", out, "Selection result (JSON); stage1 shortlist or stage2 top set");
    app->add_option("--percentile", pct, "Baseline percentile a combo must exceed (percent)");
    app->add_option("--consistency", consistency, "Stage 2 rule over replicates: all, majority or mean");
  }

  void run(const std::string& stage, const std::vector<nl::optimizer::AggregateScore>& aggs) const {
    if (baselines.empty()) return;
    if (out.empty()) throw nl::ConfigError("--baseline needs --select-out");
    std::vector<std::vector<double>> groups;
    for (const auto& b : baselines) groups.push_back(nl::analysis::load_frame(b).scores());
    json j;
    if (stage == "stage2") {
      std::vector<double> pooled;
      for (const auto& g : groups) pooled.insert(pooled.end(), g.begin(), g.end());
      const auto top = nl::optimizer::stage2_select(aggs, pooled, nl::optimizer::consistency_from_string(consistency), pct);
      j = {{"stage", "stage2"}, {"threshold", top.threshold}, {"consistency", consistency}, {"selected", top.selected}};
    } else {
      const auto sl = nl::optimizer::stage1_select(aggs, groups, pct);
      j = {{"stage", "stage1"}, {"thresholds", sl.thresholds}, {"warning", sl.warning}, {"selected", sl.selected}};
    }
    j["percentile"] = pct;
    auto os = open_out(out);
    os << j.dump(2) << '\n';
  }
};

void validate_select(const SelectOptions& sel, const std::string& stage) {
  if (!sel.baselines.empty() && sel.out.empty()) throw nl::ConfigError("--baseline needs --select-out");
  if (stage == "stage2") nl::optimizer::consistency_from_string(sel.consistency);
  if (!(sel.pct >= 0 && sel.pct <= 100)) throw nl::ConfigError("--percentile must be in [0, 100]");
}

json study_summary(const nl::optimizer::StudyCoordinator& coord, const std::vector<nl::optimizer::AggregateScore>& aggs,
                   const std::string& log) {
  std::size_t valid = 0;
  for (const auto& a : aggs) valid += a.valid ? 1 : 0;
  return {{"units", coord.spec().units.size()}, {"aggregates", aggs.size()}, {"valid", valid}, {"log", log}};
}

// ---- sweep run ----

struct SweepRun {
  TrialOptions trial;
  StudyOptions study;
  SelectOptions select;
  bool local = false;
  std::size_t workers = 1;

  void add(CLI::App* app) {
    trial.add(app, false);
    study.add(app);
    select.add(app);
    app->add_flag("--local", local, "Evaluate trials in-process with a worker pool")->required();
    app->add_option("--workers", workers, "Worker threads for --local (count)");
  }

  void run() const {
    if (workers < 1) throw nl::ConfigError("--workers must be at least 1");
    const auto base = trial.build();
    validate_select(select, study.stage);
    nl::optimizer::StudyCoordinator coord(study.spec(base), study.log_path);
    // Each slot stands in for a distinct client, so quorum is met locally.
    const auto aggs = nl::optimizer::run_local(coord, workers, nl::optimizer::trial_runner(base));
    select.run(study.stage, aggs);
    print_json(study_summary(coord, aggs, study.log_path));
  }
};

// ---- serve ----

struct Serve {
  TrialOptions trial;
  StudyOptions study;
  SelectOptions select;
  std::string host = "127.0.0.1";
  std::uint16_t port = 7070;
  int retry_ms = 200;

  void add(CLI::App* app) {
    trial.add(app, false);
    study.add(app);
    select.add(app);
    app->add_option("--host", host, "Bind address");
    app->add_option("--port", port, "TCP port (0 picks a free one)");
    app->add_option("--wait-retry", retry_ms, "Retry hint sent to idle clients (ms)");
  }

  void run() const {
    const auto base = trial.build();
    validate_select(select, study.stage);
    nl::optimizer::StudyCoordinator coord(study.spec(base), study.log_path);
    nl::optimizer::StudyServer server(coord, host, port, retry_ms);
    server.start();
    print_json({{"listening", host}, {"port", server.port()}});
    const auto aggs = server.run();
    select.run(study.stage, aggs);
    print_json(study_summary(coord, aggs, study.log_path));
  }
};

// ---- client ----

struct Client {
  TrialOptions trial;
  std::string host = "127.0.0.1";
  std::uint16_t port = 7070;
  std::string client_id;
  int retries = 10;
  int retry_delay_ms = 200;

  void add(CLI::App* app) {
    trial.add(app, false, false);
    app->add_option("--host", host, "Server address");
    app->add_option("--port", port, "Server TCP port")->required();
    app->add_option("--client-id", client_id, "Unique client name, e.g. a culture id")->required();
    app->add_option("--retries", retries, "Consecutive connection failures tolerated (count)");
    app->add_option("--retry-delay", retry_delay_ms, "Delay between reconnection attempts (ms)");
  }

  void run() const {
    const auto base = trial.build();
    nl::optimizer::ClientOptions opt;
    opt.host = host;
    opt.port = port;
    opt.client_id = client_id;
    opt.substrate = std::string(nl::substrate::to_string(base.substrate.kind));
    opt.max_retries = retries;
    opt.retry_delay_ms = retry_delay_ms;
    const auto stats = nl::optimizer::client_run(opt, nl::optimizer::trial_runner(base));
    print_json({{"client_id", client_id}, {"trials", stats.trials}, {"reconnects", stats.reconnects}});
  }
};

// ---- dqn ----

struct DqnOptions {
  std::optional<double> lr, final_epsilon, horizon, gamma;
  std::optional<int> target_update, train_freq;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  EnvOptions env;

  void add(CLI::App* app) {
    app->add_option("--learning-rate", lr, "SGD step size");
    app->add_option("--target-update", target_update, "Target network refresh period (steps)");
    app->add_option("--train-freq", train_freq, "Environment steps per gradient update (steps)");
    app->add_option("--final-epsilon", final_epsilon, "Exploration rate after annealing (probability)");
    app->add_option("--exploration-horizon", horizon, "Share of steps over which epsilon anneals (fraction)");
    app->add_option("--gamma", gamma, "Discount factor");
    app->add_option("--steps", steps, "Environment interactions (steps)");
    app->add_option("--seed", seed, "Seed for the env, weights and exploration");
    env.add(app);
  }

  nl::dqn::DqnHyperParams hp() const {
    nl::dqn::DqnHyperParams h;
    if (lr) h.learning_rate = *lr;
    if (target_update) h.target_update_freq = *target_update;
    if (train_freq) h.train_freq = *train_freq;
    if (final_epsilon) h.final_epsilon = *final_epsilon;
    if (horizon) h.exploration_horizon = *horizon;
    if (gamma) h.gamma = *gamma;
    h.validate();
    return h;
  }

  nl::env::EnvConfig env_config() const {
    nl::env::EnvConfig e;
    env.apply(e);
    e.validate();
    if (steps < 1) throw nl::ConfigError("--steps must be at least 1");
    return e;
  }
};

struct DqnTrain {
  DqnOptions dqn;
  std::string out, checkpoint;
  std::string agent = "dqn";

  void add(CLI::App* app) {
    dqn.add(app);
    app->add_option("--agent", agent, "dqn, or random for the uniform-random policy baseline");
    app->add_option("--out", out, "Result file in the trial schema (JSONL)")->required();
    app->add_option("--checkpoint", checkpoint, "Trained network weights (JSON)");
  }

  void run() const {
    const auto hp = dqn.hp();
    const auto env = dqn.env_config();
    if (agent != "dqn" && agent != "random") throw nl::ConfigError("unknown agent '" + agent + "'");
    if (agent == "random" && !checkpoint.empty()) throw nl::ConfigError("--checkpoint needs --agent dqn");
    nl::loop::TrialResult result;
    if (agent == "dqn") {
      const auto run = nl::dqn::train_dqn(env, hp, dqn.steps, dqn.seed);
      result = run.result;
      if (!checkpoint.empty()) nl::dqn::save_checkpoint(checkpoint, run.net, hp);
    } else {
      result = nl::dqn::random_policy(env, dqn.steps, dqn.seed);
    }
    auto os = open_out(out);
    nl::loop::write_trial_jsonl(os, result);
    print_json({{"agent", agent},
                {"score", nl::loop::score(result)},
                {"food", result.episodes.front().food},
                {"out", out}});
  }
};

struct DqnHpo {
  DqnOptions dqn;
  std::size_t samples = 20;
  std::size_t seeds_per = 3;
  std::uint64_t search_seed = 0;
  std::size_t workers = 1;
  std::string log;

  void add(CLI::App* app) {
    dqn.add(app);
    app->add_option("--samples", samples, "Random hyperparameter sets to evaluate (count)");
    app->add_option("--seeds-per-sample", seeds_per, "Training seeds per set, aggregated like clients (count)");
    app->add_option("--search-seed", search_seed, "Seed of the hyperparameter sampler");
    app->add_option("--workers", workers, "Worker threads (count)");
    app->add_option("--log", log, "Study log (JSONL); an existing log is resumed")->required();
  }

  void run() const {
    const auto base = dqn.hp();
    const auto env = dqn.env_config();
    if (samples < 1 || seeds_per < 1) throw nl::ConfigError("--samples and --seeds-per-sample must be positive");
    nl::optimizer::StudySpec spec;
    spec.label = "dqn-hpo";
    spec.units = nl::optimizer::schedule(nl::dqn::sample_hyperparameters(samples, search_seed, base), 1, search_seed);
    spec.quorum = seeds_per;
    spec.seed = dqn.seed;
    spec.config = nl::dqn::dqn_config_json(env, base, dqn.steps, dqn.seed, "dqn");
    nl::optimizer::StudyCoordinator coord(spec, log);
    const auto aggs = nl::optimizer::run_local(coord, workers, nl::dqn::dqn_runner(env, base, dqn.steps));
    const auto best = std::max_element(aggs.begin(), aggs.end(), [](const auto& a, const auto& b) { return a.mean < b.mean; });
    print_json({{"best", {{"params", best->params}, {"score", best->mean}}}, {"aggregates", aggs.size()}, {"log", log}});
  }
};

// ---- baseline record ----

struct BaselineRecord {
  TrialOptions trial;
  std::uint64_t duration_ms = 60000;
  std::uint64_t segment_ms = 1000;
  std::string out;

  void add(CLI::App* app) {
    trial.add(app, true, false);
    app->add_option("--duration", duration_ms, "Recording length (ms)");
    app->add_option("--segment", segment_ms, "Segment length (ms)");
    app->add_option("--out", out, "Replay recording (JSONL)")->required();
  }

  void run() const {
    const auto cfg = trial.build();
    if (duration_ms < 1 || segment_ms < 1) throw nl::ConfigError("--duration and --segment must be positive");
    auto sub = nl::substrate::make_substrate(cfg.substrate, cfg.layout, cfg.seeds.substrate, &cfg.encoding);
    auto os = open_out(out);
    nl::substrate::write_replay_header(os, sub->channels());
    std::uint64_t spikes = 0;
    for (std::uint64_t t = 0; t < duration_ms; t += segment_ms) {
      const auto m = nl::codec::to_spikes(sub->spontaneous(std::min(segment_ms, duration_ms - t)), cfg.detector);
      spikes += m.spikes.total();
      nl::substrate::write_replay_segment(os, m);
    }
    print_json({{"substrate", nl::substrate::to_string(cfg.substrate.kind)},
                {"duration_ms", duration_ms},
                {"spikes", spikes},
                {"out", out}});
  }
};

// ---- analyze ----

nl::analysis::StudyFrame load_frames(const std::vector<std::string>& paths, const std::string& group) {
  nl::analysis::StudyFrame f;
  for (const auto& p : paths) f.append(nl::analysis::load_frame(p, group));
  return f;
}

struct AnalyzeMarginals {
  std::vector<std::string> inputs;
  double pct = 1.0;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--in", inputs, "Study logs or score files (JSONL)")->required()->check(CLI::ExistingFile);
    app->add_option("--top", pct, "Top share of scores to summarize (percent)");
    app->add_option("--out", out, "Marginal table (JSON)")->required();
  }

  void run() const {
    const auto frame = load_frames(inputs, "");
    json j = nl::analysis::top_percentile_marginals(frame, pct);
    j["top_percent"] = pct;
    j["rows"] = frame.rows.size();
    auto os = open_out(out);
    os << j.dump(2) << '\n';
    print_json({{"threshold", j.at("threshold")}, {"top_rows", j.at("top_rows")}, {"out", out}});
  }
};

struct AnalyzeCompare {
  std::vector<std::string> a, b;
  bool permutation = false;
  std::uint64_t seed = 0;
  std::size_t resamples = 100000;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--a", a, "Scores of group A (study logs, trial or score JSONL)")->required()->check(CLI::ExistingFile);
    app->add_option("--b", b, "Scores of group B")->required()->check(CLI::ExistingFile);
    app->add_flag("--permutation", permutation, "Permutation p-value instead of the t approximation");
    app->add_option("--resamples", resamples, "Random splits when enumeration is too large (count)");
    app->add_option("--seed", seed, "Seed for bootstrap intervals and permutation sampling");
    app->add_option("--out", out, "Report (JSON)")->required();
  }

  void run() const {
    if (resamples < 1) throw nl::ConfigError("--resamples must be positive");
    auto fa = load_frames(a, "A");
    const auto fb = load_frames(b, "B");
    const auto sa = fa.scores(), sb = fb.scores();
    json test;
    try {
      if (permutation) {
        nl::analysis::PermutationOptions opt;
        opt.seed = seed;
        opt.resamples = resamples;
        test = nl::analysis::brunner_munzel_permutation(sa, sb, opt);
      } else {
        test = nl::analysis::brunner_munzel(sa, sb);
      }
    } catch (const nl::DegenerateVarianceError& e) {
      throw nl::DataError(std::string(e.what()) + " (pass --permutation)");
    }
    fa.append(fb);
    json j{{"test", "brunner_munzel"}, {"result", test}, {"groups", nl::analysis::score_table(fa, "group", seed)}};
    j["a"] = a;
    j["b"] = b;
    auto os = open_out(out);
    os << j.dump(2) << '\n';
    print_json({{"p_two_sided", test.at("p_two_sided")}, {"p_hat", test.at("p_hat")}, {"out", out}});
  }
};

struct AnalyzeHeatmap {
  std::string input;
  std::size_t episode = 0;
  std::size_t columns = 8;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--in", input, "Trial result (JSONL)")->required()->check(CLI::ExistingFile);
    app->add_option("--episode", episode, "Episode index (0-based)");
    app->add_option("--columns", columns, "Electrode grid columns (count)");
    app->add_option("--out", out, "Relative spike counts per channel (CSV)")->required();
  }

  void run() const {
    if (columns < 1) throw nl::ConfigError("--columns must be positive");
    std::ifstream in(input);
    if (!in) throw nl::IoError("cannot open '" + input + "'");
    const auto result = nl::loop::read_trial_jsonl(in, input);
    const auto h = nl::analysis::export_heatmap(result, episode, columns);
    auto os = open_out(out);
    nl::analysis::write_heatmap_csv(os, h);
    print_json({{"rows", h.rows}, {"columns", h.cols}, {"partial", h.partial}, {"out", out}});
  }
};

// ---- env replay ----

struct EnvReplay {
  std::string from;
  std::size_t episode = 0;
  std::string actions;
  std::optional<std::uint64_t> seed;
  EnvOptions env;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--from", from, "Trial result whose actions are replayed (JSONL)")->check(CLI::ExistingFile);
    app->add_option("--episode", episode, "Episode of --from to replay (0-based)");
    app->add_option("--actions", actions, "Comma-separated actions: forward, left, right");
    app->add_option("--seed", seed, "Environment seed (defaults to the trial's env seed)");
    env.add(app);
    app->add_option("--out", out, "Episode trace (JSONL)")->required();
  }

  void run() const {
    if (from.empty() == actions.empty()) throw nl::ConfigError("give exactly one of --from and --actions");
    nl::env::EnvConfig cfg;
    std::vector<nl::env::Action> acts;
    std::vector<double> recorded;
    if (!from.empty()) {
      std::ifstream in(from);
      if (!in) throw nl::IoError("cannot open '" + from + "'");
      const auto r = nl::loop::read_trial_jsonl(in, from);
      if (episode >= r.episodes.size()) throw nl::ConfigError("episode " + std::to_string(episode) + " not in trial");
      if (r.config.contains("env")) cfg = r.config.at("env").get<nl::env::EnvConfig>();
      cfg.seed = r.seeds.env;
      for (const auto& s : r.episodes[episode].steps) {
        acts.push_back(s.action);
        recorded.push_back(s.reward);
      }
    } else {
      std::stringstream ss(actions);
      std::string a;
      while (std::getline(ss, a, ','))
        if (!a.empty()) acts.push_back(nl::env::action_from_string(a));
    }
    env.apply(cfg);
    if (seed) cfg.seed = *seed;
    cfg.validate();
    auto os = open_out(out);
    auto state = nl::env::reset(cfg);
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < acts.size(); ++i) {
      const auto o = nl::env::step(state, acts[i]);
      os << nl::env::trace_record(static_cast<int>(i), state, acts[i], o).dump() << '\n';
      if (i < recorded.size() && !seed && o.reward != recorded[i]) ++mismatches;
    }
    print_json({{"steps", acts.size()},
                {"total_reward", state.cumulative_reward},
                {"food", state.food_count},
                {"mismatches", mismatches},
                {"out", out}});
    if (mismatches) throw nl::DataError(std::to_string(mismatches) + " replayed rewards differ from the recording");
  }
};

}  // namespace

int run_command(int argc, char** argv) {
  CLI::App app{"Closed-loop neurostimulation simulator and parameter screening"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  app.get_formatter()->column_width(40);

  TrialRun trial_run;
  SweepRun sweep_run;
  Serve serve;
  Client client;
  DqnTrain dqn_train;
  DqnHpo dqn_hpo;
  BaselineRecord baseline_record;
  AnalyzeMarginals marginals;
  AnalyzeCompare compare;
  AnalyzeHeatmap heatmap;
  EnvReplay env_replay;

  std::function<void()> action;
  auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& desc, auto& cmd) {
    auto* sub = parent->add_subcommand(name, desc);
    cmd.add(sub);
    sub->callback([&action, &cmd] { action = [&cmd] { cmd.run(); }; });
    return sub;
  };
  auto group = [&](const std::string& name, const std::string& desc) {
    auto* g = app.add_subcommand(name, desc);
    g->require_subcommand(1);
    return g;
  };

  leaf(group("trial", "Closed-loop trials"), "run", "Run one trial and write its result", trial_run);
  leaf(group("sweep", "Parameter sweeps"), "run", "Screen a parameter grid in-process", sweep_run);
  leaf(&app, "serve", "Serve a study to network clients", serve);
  leaf(&app, "client", "Evaluate trials for a study server", client);
  auto* dqn = group("dqn", "Deep Q-network comparison agent");
  leaf(dqn, "train", "Train online and write the run in the trial schema", dqn_train);
  leaf(dqn, "hpo", "Random search over DQN hyperparameters", dqn_hpo);
  leaf(group("baseline", "Control recordings"), "record", "Record spontaneous activity to a replay file",
       baseline_record);
  auto* analyze = group("analyze", "Offline analysis");
  leaf(analyze, "marginals", "Parameter-value shares among the top scores", marginals);
  leaf(analyze, "compare", "Brunner-Munzel comparison of two score sets", compare);
  leaf(analyze, "heatmap", "Per-channel relative spike counts of one episode", heatmap);
  leaf(group("env", "Gridworld utilities"), "replay", "Replay an action sequence and export the trace", env_replay);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (action) action();
    return kOk;
  } catch (const nl::Error& e) {
    std::cerr << "neuroloop: " << e.what() << '\n';
    return e.is_configuration() ? kConfig : kRuntime;
  } catch (const json::exception& e) {
    std::cerr << "neuroloop: malformed input: " << e.what() << '\n';
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "neuroloop: " << e.what() << '\n';
    return kRuntime;
  }
}

int main(int argc, char** argv) { return run_command(argc, argv); }
