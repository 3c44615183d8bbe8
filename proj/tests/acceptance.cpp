// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//
//   acceptance [--only N] [--write-golden]

#include <signal.h>
#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "neuroloop/neuroloop.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace neuroloop;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

fs::path work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("neuroloop_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------- AC1

Verdict ac1() {
  using namespace optimizer;
  const auto s1 = build_grid(Stage::stage1).size();
  const auto s2 = build_grid(Stage::stage2);
  const auto reps = schedule(s2, 4, 1).size();

  // Planted-signal frame over the stage-2 grid: a 12-combo box scores high
  // on every replicate, everything else near the baseline.
  auto in_top = [](const ParamMap& p) {
    return p.at("min_frequency") == 4.0 && p.at("max_frequency") <= 80.0 && p.at("amplitude") == 2.5 &&
           p.at("pulse_width") <= 80.0 && p.at("tick_rate") <= 2.0 && p.at("ticks_per_step") == 4.0;
  };
  std::mt19937_64 g(2024);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<AggregateScore> replicated;
  for (const auto& u : schedule(s2, 4, 1)) {
    AggregateScore a;
    a.unit = u.id;
    a.combo = u.combo;
    a.replicate = u.replicate;
    a.params = u.params;
    a.mean = (in_top(u.params) ? 0.5 : 0.0) + noise(g);
    a.clients = 4;
    a.valid = true;
    replicated.push_back(a);
  }
  std::vector<double> baseline;
  for (int i = 0; i < 200; ++i) baseline.push_back(noise(g));
  const auto top = stage2_select(replicated, baseline);
  bool same = top.selected.size() == 12;
  for (const auto& p : top.selected) same = same && in_top(p);

  Verdict v;
  v.pass = s1 == 1296 && s2.size() == 64 && reps == 256 && same;
  v.detail = "stage1 " + std::to_string(s1) + ", stage2 " + std::to_string(s2.size()) + ", replicated " +
             std::to_string(reps) + ", top set " + std::to_string(top.selected.size()) +
             (same ? " (matches planted box)" : " (differs from planted box)");
  return v;
}

// ---------------------------------------------------------------- AC2

Verdict ac2() {
  const auto grid = optimizer::build_grid(optimizer::Stage::stage1);
  const auto layout = codec::centered_layout();
  double worst_rel = 0.0;
  std::size_t onset_mismatch = 0, checked = 0;
  for (const auto& combo : grid.combos()) {
    const auto p = codec::apply_params({}, combo);
    const double fmin = combo.at("min_frequency"), fmax = combo.at("max_frequency");
    const double tick_s = 1.0 / combo.at("tick_rate");
    const auto tps = static_cast<std::size_t>(combo.at("ticks_per_step"));
    for (int x : {-1, 0, 1}) {
      // x in [-1, 1] maps linearly onto [fmin, fmax]
      const double expect = fmin + (fmax - fmin) * (x + 1) / 2.0;
      const double got = codec::rate_frequency(x, p).hz;
      worst_rel = std::max(worst_rel, std::abs(got - expect) / expect);

      // Pulse k fires at k / f seconds; count those inside the tick.
      std::vector<std::uint32_t> times;
      for (long k = 0;; ++k) {
        const long double t = static_cast<long double>(k) / expect;
        if (t >= tick_s) break;
        times.push_back(static_cast<std::uint32_t>(std::floor(t * 1000.0L + 1e-9L)));
      }
      const auto tick = codec::encode_tick(x, p, layout);
      const auto step = codec::encode_step(x, p, layout);
      for (std::size_t c = 0; c < layout.channels; ++c) {
        const bool enc = std::find(layout.encoding.begin(), layout.encoding.end(), c) != layout.encoding.end();
        const auto ev = tick.onsets.events(c);
        const std::vector<std::uint32_t> want = enc ? times : std::vector<std::uint32_t>{};
        if (std::vector<std::uint32_t>(ev.begin(), ev.end()) != want) ++onset_mismatch;
        if (step.onsets.count(c) != want.size() * tps) ++onset_mismatch;
      }
      ++checked;
    }
  }
  Verdict v;
  v.pass = worst_rel <= 1e-12 && onset_mismatch == 0 && checked == 1296 * 3;
  v.detail = std::to_string(checked) + " (combo, x) cases; worst relative rate error " + fmt(worst_rel, 3) +
             "; onset mismatches " + std::to_string(onset_mismatch);
  return v;
}

// ---------------------------------------------------------------- AC3

Verdict ac3() {
  const auto layout = codec::centered_layout();
  const auto active = layout.active_channels();
  std::size_t bad_structure = 0, periods = 0;
  std::set<std::uint64_t> seen;
  for (const auto& combo : optimizer::build_grid(optimizer::Stage::stage1).combos()) {
    const auto e = codec::apply_params({}, combo);
    const auto period = e.interaction_ms();
    if (!seen.insert(period).second) continue;
    ++periods;
    feedback::FeedbackParams fb;
    fb.inherit(e);
    const auto m = feedback::reinforcing_feedback(period, layout, fb);
    if (m.bins() != 2 * period) ++bad_structure;
    for (std::size_t c = 0; c < layout.channels; ++c) {
      const bool on = std::find(active.begin(), active.end(), c) != active.end();
      const auto ev = m.onsets.events(c);
      if (!on) {
        if (!ev.empty()) ++bad_structure;
        continue;
      }
      if (ev.size() != 40) {
        ++bad_structure;
        continue;
      }
      for (std::size_t b = 0; b < 5; ++b) {
        for (std::size_t i = 1; i < 8; ++i)
          if (ev[8 * b + i] - ev[8 * b + i - 1] != 10) ++bad_structure;
        if (b > 0 && ev[8 * b] - ev[8 * b - 1] <= 10) ++bad_structure;  // bursts are separate
      }
    }
  }

  Rng rng(31);
  const int draws = 1000;
  double on = 0;
  std::size_t isi_out = 0, isi_n = 0;
  double isi_min = 1e9, isi_max = 0;
  for (int i = 0; i < draws; ++i) {
    const auto m = feedback::plasticity_feedback(2000, layout, {}, rng);
    for (auto c : active) {
      const auto ev = m.onsets.events(c);
      on += ev.empty() ? 0 : 1;
      for (std::size_t k = 1; k < ev.size(); ++k) {
        const double isi = ev[k] - ev[k - 1];
        isi_min = std::min(isi_min, isi);
        isi_max = std::max(isi_max, isi);
        ++isi_n;
        if (isi < 40.0 || isi > 333.4) ++isi_out;
      }
    }
  }
  const double n = static_cast<double>(draws) * static_cast<double>(active.size());
  const double frac = on / n;
  const double sigma = std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / n);
  const bool frac_ok = std::abs(frac - 1.0 / 3.0) <= 3 * sigma;

  Verdict v;
  v.pass = bad_structure == 0 && frac_ok && isi_out == 0 && isi_n > 0;
  v.detail = std::to_string(periods) + " interaction periods, structure violations " + std::to_string(bad_structure) +
             "; activation fraction " + fmt(frac, 5) + " (1/3 +- " + fmt(3 * sigma, 3) + "); ISI range [" +
             fmt(isi_min) + ", " + fmt(isi_max) + "] ms over " + std::to_string(isi_n) + " intervals";
  return v;
}

// ---------------------------------------------------------------- AC4

std::string golden_path() { return NEUROLOOP_GOLDEN; }

std::string replay_recording() {
  // Fixed location: the path is part of the serialized trial config.
  const auto path = (fs::temp_directory_path() / "neuroloop_acceptance_replay.jsonl").string();
  substrate::RandomSubstrate src(64, {2.0}, 77);
  std::ofstream out(path);
  substrate::write_replay_header(out, 64);
  for (int i = 0; i < 120; ++i) substrate::write_replay_segment(out, codec::to_spikes(src.spontaneous(1000), {}));
  return path;
}

Verdict ac4(bool write_golden) {
  json digests;
  bool repeat_ok = true;
  for (const auto kind : {substrate::Kind::random, substrate::Kind::replay, substrate::Kind::oracle})
    for (const auto mode : {loop::Mode::A, loop::Mode::B, loop::Mode::C}) {
      loop::TrialConfig c;
      c.mode = mode;
      c.substrate.kind = kind;
      c.substrate.replay_path = kind == substrate::Kind::replay ? replay_recording() : "";
      c.substrate.oracle.planted = {{"max_frequency", 60.0}, {"amplitude", 2.5}};
      c.seeds = loop::TrialSeeds::from(1234);
      std::ostringstream a, b;
      loop::write_trial_jsonl(a, loop::run_trial(c));
      loop::write_trial_jsonl(b, loop::run_trial(c));
      repeat_ok = repeat_ok && a.str() == b.str();
      digests[std::string(substrate::to_string(kind)) + "/" + std::string(loop::to_string(mode))] =
          digest_hex(a.str());
    }
  if (write_golden) {
    std::ofstream(golden_path()) << digests.dump(2) << '\n';
    std::cerr << "wrote " << golden_path() << '\n';
  }
  std::ifstream in(golden_path());
  Verdict v;
  if (!in) {
    v.detail = "golden file " + golden_path() + " missing";
    return v;
  }
  const auto golden = json::parse(in);
  std::size_t match = 0;
  for (const auto& [k, d] : digests.items()) match += golden.value(k, "") == d ? 1 : 0;
  v.pass = repeat_ok && match == 9;
  v.detail = std::string("9 (substrate, mode) pairs; repeated runs ") + (repeat_ok ? "identical" : "DIFFER") +
             "; golden traces matched " + std::to_string(match) + "/9";
  return v;
}

// ---------------------------------------------------------------- AC5

Verdict ac5() {
  using namespace optimizer;
  const ParameterGrid reduced{{{"max_frequency", {40.0, 60.0, 80.0, 100.0}},
                               {"amplitude", {1.0, 2.0, 2.5}},
                               {"pulse_width", {40.0, 80.0, 160.0}}}};
  const ParamMap planted{{"max_frequency", 60.0}, {"amplitude", 2.5}, {"pulse_width", 40.0}};

  loop::TrialConfig oracle_base;
  oracle_base.substrate.kind = substrate::Kind::oracle;
  oracle_base.substrate.oracle.planted = planted;
  loop::TrialConfig random_base;
  random_base.substrate.kind = substrate::Kind::random;

  int hits = 0;
  std::uint64_t virtual_ms = 0;
  std::size_t shortlist_total = 0;
  const int runs = 20;
  for (int run = 0; run < runs; ++run) {
    const auto seed = static_cast<std::uint64_t>(1000 + run);
    // Random-substrate baselines for two groups.
    std::vector<std::vector<double>> groups;
    for (int grp = 0; grp < 2; ++grp) {
      StudySpec b;
      b.units = schedule(reduced, 1, derive_seed(seed, 10 + grp));
      b.quorum = 4;
      b.seed = derive_seed(seed, 20 + grp);
      const auto path = (work_dir() / ("ac5_base_" + std::to_string(run) + "_" + std::to_string(grp))).string();
      fs::remove(path);
      StudyCoordinator coord(b, path);
      std::vector<double> scores;
      for (const auto& a : run_local(coord, 1, trial_runner(random_base)))
        for (const auto& cs : a.scores) scores.push_back(cs.score);
      groups.push_back(scores);
    }

    StudySpec spec;
    spec.units = schedule(reduced, 1, seed);
    spec.quorum = 4;
    spec.seed = seed;
    const auto path = (work_dir() / ("ac5_study_" + std::to_string(run))).string();
    fs::remove(path);
    StudyCoordinator coord(spec, path);
    StudyServer server(coord, "127.0.0.1", 0);
    server.start();
    std::vector<std::future<ClientStats>> clients;
    for (int i = 0; i < 4; ++i) {
      ClientOptions o;
      o.port = server.port();
      o.client_id = "culture-" + std::to_string(i);
      o.substrate = "oracle";
      clients.push_back(std::async(std::launch::async, client_run, o, trial_runner(oracle_base)));
    }
    const auto aggs = server.run();
    for (auto& f : clients) f.get();
    const auto shortlist = stage1_select(aggs, groups);
    shortlist_total += shortlist.selected.size();
    for (const auto& a : shortlist.selected)
      if (a.params == planted) ++hits;
    for (const auto& a : aggs) {
      auto cfg = apply_assignment(oracle_base, {0, 0, 0, 0, a.params, spec.mode, {}});
      virtual_ms += a.clients * loop::expected_virtual_ms(cfg);
    }
  }
  Verdict v;
  v.pass = hits >= 19;
  v.detail = "planted combo shortlisted in " + std::to_string(hits) + "/" + std::to_string(runs) +
             " runs (36-combo grid, 4 clients, quorum 4; mean shortlist " +
             fmt(static_cast<double>(shortlist_total) / runs, 3) + "; " + fmt(virtual_ms / 3.6e6, 3) +
             " h simulated)";
  return v;
}

// ---------------------------------------------------------------- AC6

double brute_p99(std::vector<double> g) {
  std::sort(g.begin(), g.end());
  const double h = 0.99 * static_cast<double>(g.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, g.size() - 1);
  return g[lo] + (h - static_cast<double>(lo)) * (g[hi] - g[lo]);
}

Verdict ac6() {
  using namespace optimizer;
  std::mt19937_64 g(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t frames = 0, disagreements = 0, admitted = 0;
  for (int rep = 0; rep < 500; ++rep) {
    const int n_groups = 1 + rep % 3;
    std::vector<std::vector<double>> groups(static_cast<std::size_t>(n_groups));
    for (auto& grp : groups) {
      const int n = 5 + static_cast<int>(u(g) * 200);
      for (int i = 0; i < n; ++i) grp.push_back(rep % 7 == 0 ? 0.0 : u(g));
    }
    std::vector<AggregateScore> aggs;
    for (int i = 0; i < 200; ++i) {
      AggregateScore a;
      a.unit = static_cast<std::size_t>(i);
      a.params = {{"combo", static_cast<double>(i)}};
      a.mean = u(g) * 1.05;
      a.valid = u(g) < 0.9;
      a.clients = a.valid ? 4 : 2;
      aggs.push_back(a);
    }
    std::set<std::size_t> expect;
    for (const auto& a : aggs) {
      bool keep = a.valid;
      for (const auto& grp : groups) keep = keep && a.mean > brute_p99(grp);
      if (keep) expect.insert(a.unit);
    }
    std::set<std::size_t> got;
    for (const auto& a : stage1_select(aggs, groups).selected) got.insert(a.unit);
    disagreements += got == expect ? 0 : 1;
    admitted += got.size();
    ++frames;
  }
  Verdict v;
  v.pass = disagreements == 0;
  v.detail = std::to_string(frames) + " synthetic frames (1-3 groups), " + std::to_string(admitted) +
             " admissions, disagreements with brute force " + std::to_string(disagreements);
  return v;
}

// ---------------------------------------------------------------- AC7

Verdict ac7() {
  using namespace dqn;
  // Gradients.
  Rng rng(77);
  int nets = 0;
  double worst = 0;
  while (nets < 100) {
    const auto n = QNet::random(rng);
    const auto x = one_hot(static_cast<int>(rng.below(3)) - 1);
    bool kink = false;
    for (double p : forward_pass(n, x).pre) kink = kink || std::abs(p) < 1e-4;
    if (kink) continue;
    const std::size_t a = rng.below(3);
    const double y = rng.uniform(-2, 2);
    const auto analytic = loss_gradient(n, x, a, y).first.flatten();
    auto p = n.flatten();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i], h = 1e-6;
      p[i] = keep + h;
      const double up = loss(QNet::unflatten(p), x, a, y);
      p[i] = keep - h;
      const double down = loss(QNet::unflatten(p), x, a, y);
      p[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-3});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
    }
    ++nets;
  }

  // Tuning: random search through the optimizer's local mode.
  env::EnvConfig env;
  const std::size_t steps = 2000;
  optimizer::StudySpec spec;
  spec.units = optimizer::schedule(sample_hyperparameters(24, 5), 1, 5);
  spec.quorum = 3;
  spec.seed = 5;
  const auto path = (work_dir() / "ac7_hpo.jsonl").string();
  fs::remove(path);
  optimizer::StudyCoordinator coord(spec, path);
  const auto aggs = optimizer::run_local(coord, 1, dqn_runner(env, {}, steps));
  const auto best = std::max_element(aggs.begin(), aggs.end(), [](auto& a, auto& b) { return a.mean < b.mean; });
  const auto tuned = apply_params({}, best->params);

  // Fresh seeds for the comparison.
  double dqn_score = 0, rnd_score = 0, dqn_food = 0, rnd_food = 0;
  const int seeds = 30;
  for (int s = 0; s < seeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(100000 + s);
    const auto run = train_dqn(env, tuned, steps, seed);
    const auto rnd = random_policy(env, steps, seed);
    dqn_score += loop::score(run.result) / seeds;
    rnd_score += loop::score(rnd) / seeds;
    dqn_food += run.result.episodes[0].food / static_cast<double>(seeds);
    rnd_food += rnd.episodes[0].food / static_cast<double>(seeds);
  }
  // The random-policy mean score is slightly negative (collisions outweigh
  // chance food), which makes "3x" vacuous; food collected is checked too.
  const bool score_ok = dqn_score >= 3 * rnd_score && dqn_score >= 3 * std::abs(rnd_score);
  const bool food_ok = dqn_food >= 3 * rnd_food;
  Verdict v;
  v.pass = nets == 100 && worst <= 1e-5 && score_ok && food_ok;
  v.detail = "worst gradient rel. error " + fmt(worst, 3) + " over 100 nets; tuned DQN score " + fmt(dqn_score) +
             " vs random " + fmt(rnd_score) + ", food " + fmt(dqn_food) + " vs " + fmt(rnd_food) + " (30-seed means)";
  return v;
}

// ---------------------------------------------------------------- AC8

Verdict ac8() {
  using namespace analysis;
  std::mt19937_64 g(8);
  std::normal_distribution<double> z;
  std::uniform_int_distribution<int> size(30, 40);
  std::uniform_real_distribution<double> shift(-0.6, 0.6);
  int compared = 0, drawn = 0, within = 0;
  double worst = 0;
  while (compared < 200) {
    ++drawn;
    std::vector<double> a(static_cast<std::size_t>(size(g))), b(static_cast<std::size_t>(size(g)));
    const double sh = shift(g);
    for (auto& x : a) x = z(g);
    for (auto& x : b) x = z(g) + sh;
    const auto t = brunner_munzel(a, b);
    if (t.p_two_sided < 0.05 || t.p_two_sided > 0.95) continue;
    PermutationOptions opt;
    opt.seed = static_cast<std::uint64_t>(drawn);
    opt.resamples = 100000;
    const auto p = brunner_munzel_permutation(a, b, opt);
    const double d = std::abs(p.p_two_sided - t.p_two_sided);
    worst = std::max(worst, d);
    within += d <= 0.01 ? 1 : 0;
    ++compared;
  }
  const std::vector<double> ea{1, 2, 3, 4}, eb{10, 20, 30, 40};
  const auto ex = brunner_munzel_permutation(ea, eb);
  bool degenerate_thrown = false;
  try {
    brunner_munzel(ea, eb);
  } catch (const DegenerateVarianceError&) {
    degenerate_thrown = true;
  }
  const bool exact = ex.exhaustive && ex.permutations == 70 && ex.p_two_sided == 2.0 / 70.0 && degenerate_thrown;
  Verdict v;
  v.pass = within == compared && exact;
  v.detail = std::to_string(within) + "/" + std::to_string(compared) + " pairs within 0.01 (n 30-40 per sample, " +
             "100k permutations; worst " + fmt(worst, 3) + "); exhaustive example p = " + fmt(ex.p_two_sided, 6) +
             " over " + std::to_string(ex.permutations) + " splits";
  return v;
}

// ---------------------------------------------------------------- AC9

std::uint64_t evoked(substrate::Substrate& s, const codec::StimulationMatrix& probe) {
  return codec::to_spikes(s.stimulate(probe, probe.bins()), {}).spikes.total();
}

// Trend statistic: Spearman correlation between repetition index and evoked
// count, pooled over independent sessions.
template <typename Make>
double pooled_trend(Make make, int sessions, int reps, const codec::StimulationMatrix& probe) {
  std::vector<double> idx, counts;
  for (int s = 0; s < sessions; ++s) {
    auto sub = make(static_cast<std::uint64_t>(s));
    for (int r = 0; r < reps; ++r) {
      idx.push_back(r);
      counts.push_back(static_cast<double>(evoked(*sub, probe)));
    }
  }
  return spearman(idx, counts);
}

Verdict ac9() {
  const auto layout = codec::centered_layout();
  const auto probe = codec::encode_step(1, {}, layout);
  const auto fb = feedback::reinforcing_feedback(probe.bins(), layout, {});

  // History effect: 20 x (probe + reinforcing feedback) against a clone that
  // rested for the same virtual time, then 5 probes 1 s apart on each.
  double min_change = 1e9, max_change = -1e9;
  const int seeds = 10;
  for (int s = 1; s <= seeds; ++s) {
    substrate::SpikingSubstrate trained(layout, {}, static_cast<std::uint64_t>(s));
    substrate::SpikingSubstrate control(layout, {}, static_cast<std::uint64_t>(s));
    for (int i = 0; i < 20; ++i) {
      trained.stimulate(probe, probe.bins());
      trained.stimulate(fb, fb.bins());
    }
    control.rest(trained.clock_ms());
    double t = 0, c = 0;
    for (int k = 0; k < 5; ++k) {
      t += static_cast<double>(evoked(trained, probe));
      c += static_cast<double>(evoked(control, probe));
      trained.rest(1000);
      control.rest(1000);
    }
    const double change = (t - c) / c;
    min_change = std::min(min_change, change);
    max_change = std::max(max_change, change);
  }

  const int sessions = 20, reps = 100;
  const double rho_random = pooled_trend(
      [](std::uint64_t s) { return std::make_unique<substrate::RandomSubstrate>(64, substrate::RandomConfig{2.0}, s); },
      sessions, reps, probe);
  std::vector<substrate::ReplayRecording> recordings;
  const double rho_replay = pooled_trend(
      [&](std::uint64_t s) {
        substrate::RandomSubstrate src(64, {2.0}, 500 + s);
        std::stringstream ss;
        substrate::write_replay_header(ss, 64);
        for (int i = 0; i < reps * 2; ++i) substrate::write_replay_segment(ss, codec::to_spikes(src.spontaneous(1000), {}));
        return std::make_unique<substrate::ReplaySubstrate>(64, substrate::parse_replay(ss));
      },
      sessions, reps, probe);
  // Same statistic on the spiking substrate under the same protocol, to show
  // the test can detect a trend.
  const double rho_spiking = pooled_trend(
      [&](std::uint64_t s) {
        auto sub = std::make_unique<substrate::SpikingSubstrate>(layout, substrate::SpikingConfig{}, s + 1);
        return sub;
      },
      2, reps, probe);

  Verdict v;
  v.pass = min_change >= 0.10 && std::abs(rho_random) < 0.1 && std::abs(rho_replay) < 0.1;
  v.detail = "spiking history effect +" + fmt(100 * min_change, 3) + "% to +" + fmt(100 * max_change, 3) +
             "% over " + std::to_string(seeds) + " seeds; trend rho random " + fmt(rho_random, 3) + ", replay " +
             fmt(rho_replay, 3) + " (" + std::to_string(sessions) + " sessions x " + std::to_string(reps) +
             " reps), spiking " + fmt(rho_spiking, 3);
  return v;
}

// ---------------------------------------------------------------- AC10

struct Child {
  pid_t pid = -1;
  FILE* out = nullptr;
};

Child spawn_cli(const std::vector<std::string>& args) {
  int fds[2];
  if (pipe(fds) != 0) throw IoError("pipe failed");
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_adddup2(&fa, fds[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&fa, fds[0]);
  posix_spawn_file_actions_addopen(&fa, STDERR_FILENO, "/dev/null", O_WRONLY, 0);
  std::vector<std::string> all{NEUROLOOP_CLI};
  all.insert(all.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : all) argv.push_back(a.data());
  argv.push_back(nullptr);
  Child c;
  if (posix_spawn(&c.pid, NEUROLOOP_CLI, &fa, nullptr, argv.data(), environ) != 0) throw IoError("spawn failed");
  posix_spawn_file_actions_destroy(&fa);
  close(fds[1]);
  c.out = fdopen(fds[0], "r");
  return c;
}

int wait_child(Child& c) {
  int status = 0;
  waitpid(c.pid, &status, 0);
  if (c.out) fclose(c.out);
  c.out = nullptr;
  return status;
}

std::size_t count_reports(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += line.find("\"type\":\"report\"") != std::string::npos ? 1 : 0;
  return n;
}

int serve_with_clients(const std::vector<std::string>& study_args, int clients, std::size_t kill_after,
                       bool& killed) {
  std::vector<std::string> args{"serve", "--port", "0"};
  args.insert(args.end(), study_args.begin(), study_args.end());
  auto server = spawn_cli(args);
  char buf[512];
  if (!fgets(buf, sizeof buf, server.out)) throw IoError("server did not start");
  const auto port = json::parse(buf).at("port").get<int>();
  std::vector<Child> cs;
  for (int i = 0; i < clients; ++i)
    cs.push_back(spawn_cli({"client", "--substrate", "random", "--port", std::to_string(port), "--client-id",
                            "dish-" + std::to_string(i), "--retries", "0"}));
  killed = false;
  const auto& log = study_args[std::find(study_args.begin(), study_args.end(), "--log") - study_args.begin() + 1];
  if (kill_after > 0) {
    while (count_reports(log) < kill_after) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    kill(server.pid, SIGKILL);
    killed = true;
  }
  const int status = wait_child(server);
  for (auto& c : cs) wait_child(c);
  return status;
}

Verdict ac10() {
  using namespace optimizer;
  std::vector<ParamMap> combos;
  for (const auto& c : build_grid(Stage::stage2).combos())
    if (combos.size() < 30) combos.push_back(c);
  const auto combos_path = (work_dir() / "ac10_combos.json").string();
  std::ofstream(combos_path) << json(combos).dump();

  const auto ref_log = (work_dir() / "ac10_ref.jsonl").string();
  const auto log = (work_dir() / "ac10_study.jsonl").string();
  fs::remove(ref_log);
  fs::remove(log);
  auto study = [&](const std::string& l) {
    return std::vector<std::string>{"--substrate", "random", "--combos", combos_path,  "--quorum",
                                    "4",           "--mode", "B",       "--schedule-seed", "42",
                                    "--log",       l};
  };
  // Uninterrupted reference, evaluated in-process.
  auto ref_args = study(ref_log);
  ref_args.insert(ref_args.begin(), {"sweep", "run", "--local"});
  auto ref = spawn_cli(ref_args);
  const int ref_status = wait_child(ref);

  bool killed = false;
  serve_with_clients(study(log), 4, 50, killed);
  const auto before = count_reports(log);
  std::ofstream(log, std::ios::app) << R"({"type":"report","report":{"trial_id":7,"cli)";  // torn write
  bool again = false;
  const int status = serve_with_clients(study(log), 4, 0, again);

  std::multiset<decltype(outcome_key(AggregateScore{}))> want, got;
  for (const auto& a : read_aggregates(ref_log)) want.insert(outcome_key(a));
  std::set<std::size_t> units;
  bool once = true;
  for (const auto& a : read_aggregates(log)) {
    got.insert(outcome_key(a));
    once = once && units.insert(a.unit).second;
  }
  Verdict v;
  v.pass = killed && ref_status == 0 && status == 0 && want.size() == combos.size() && want == got && once;
  v.detail = "server SIGKILLed after " + std::to_string(before) + " reports, torn line appended, resumed: " +
             std::to_string(got.size()) + " aggregates, " + (want == got ? "identical to" : "DIFFERENT from") +
             " the uninterrupted run (" + std::to_string(want.size()) + ")" + (once ? "" : "; duplicate aggregates");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  bool write_golden = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc)
      only = std::stoi(argv[++i]);
    else if (a == "--write-golden")
      write_golden = true;
  }
  setenv("NEUROLOOP_LOG", "error", 0);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"grid cardinalities", ac1},
      {"rate-encoding law", ac2},
      {"feedback structure", ac3},
      {"end-to-end determinism", [&] { return ac4(write_golden); }},
      {"planted-optimum recovery", ac5},
      {"selection-rule fidelity", ac6},
      {"DQN correctness", ac7},
      {"Brunner-Munzel vs permutation", ac8},
      {"substrate non-stationarity", ac9},
      {"crash-resume", ac10},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only && static_cast<int>(i + 1) != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.detail = std::string("error: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] AC%zu %s: %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                v.detail.c_str(), secs);
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  fs::remove_all(work_dir());
  return failed == 0 ? 0 : 1;
}
