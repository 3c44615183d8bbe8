#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include "neuroloop/core/stats.hpp"
#include "neuroloop/optimizer/runner.hpp"
#include "neuroloop/optimizer/select.hpp"
#include "neuroloop/optimizer/study.hpp"

using namespace neuroloop;
using namespace neuroloop::optimizer;

namespace {

std::string fresh_log(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("neuroloop_opt_" + name + ".jsonl");
  std::filesystem::remove(p);
  return p.string();
}

AggregateScore agg(double mean, bool valid = true, double param = 0.0) {
  AggregateScore a;
  a.mean = mean;
  a.valid = valid;
  a.clients = valid ? 4 : 3;
  a.params = {{"amplitude", param}};
  return a;
}

StudySpec small_spec(std::size_t combos, std::size_t quorum, std::uint64_t seed = 1) {
  std::vector<ParamMap> cs;
  for (std::size_t i = 0; i < combos; ++i) cs.push_back({{"max_frequency", 40.0 + 10.0 * static_cast<double>(i)}});
  StudySpec s;
  s.units = schedule(cs, 1, seed);
  s.quorum = quorum;
  s.seed = seed;
  return s;
}

// Deterministic stand-in for a trial: depends only on the assignment.
double fake_score(const Assignment& a) {
  return static_cast<double>(a.params.at("max_frequency")) / 100.0 + 0.001 * static_cast<double>(a.slot);
}

std::multiset<decltype(outcome_key(AggregateScore{}))> outcome_set(const std::vector<AggregateScore>& v) {
  std::multiset<decltype(outcome_key(AggregateScore{}))> s;
  for (const auto& a : v) s.insert(outcome_key(a));
  return s;
}

}  // namespace

TEST(Grid, StageSizes) {
  EXPECT_EQ(build_grid(Stage::stage1).size(), 1296u);
  EXPECT_EQ(build_grid(Stage::stage2).size(), 64u);
  EXPECT_EQ(schedule(build_grid(Stage::stage2), 4, 0).size(), 256u);
}

TEST(Grid, CombosAreDistinctAndOnGrid) {
  const auto g = build_grid(Stage::stage1);
  const auto cs = g.combos();
  std::set<ParamMap> uniq(cs.begin(), cs.end());
  EXPECT_EQ(uniq.size(), cs.size());
  for (const auto& c : cs) {
    ASSERT_EQ(c.size(), g.axes.size());
    for (const auto& a : g.axes) EXPECT_NE(std::find(a.values.begin(), a.values.end(), c.at(a.name)), a.values.end());
  }
}

TEST(Schedule, SeededPermutation) {
  const auto g = build_grid(Stage::stage2);
  EXPECT_EQ(schedule(g, 4, 3), schedule(g, 4, 3));
  EXPECT_NE(schedule(g, 4, 3), schedule(g, 4, 4));
  const auto units = schedule(g, 4, 3);
  std::map<std::size_t, std::size_t> per_combo;
  for (std::size_t i = 0; i < units.size(); ++i) {
    EXPECT_EQ(units[i].id, i);
    EXPECT_EQ(units[i].params, g.combo(units[i].combo));
    EXPECT_EQ(units[i].replicate, i / 64);  // round-robin
    ++per_combo[units[i].combo];
  }
  EXPECT_EQ(per_combo.size(), 64u);
  for (const auto& [_, n] : per_combo) EXPECT_EQ(n, 4u);
  EXPECT_THROW(schedule(g, 0, 1), ConfigError);
}

TEST(Schedule, NotMonotoneInAnyParameter) {
  const auto g = build_grid(Stage::stage1);
  const auto units = schedule(g, 1, 2024);
  std::vector<double> idx;
  for (std::size_t i = 0; i < units.size(); ++i) idx.push_back(static_cast<double>(i));
  for (const auto& a : g.axes) {
    std::vector<double> v;
    for (const auto& u : units) v.push_back(u.params.at(a.name));
    EXPECT_LT(std::abs(spearman(idx, v)), 0.1) << a.name;
  }
}

TEST(Aggregate, MeanAndQuorum) {
  std::vector<TrialReport> r;
  const double scores[] = {0.2, 0.4, 0.6, 0.8};
  for (std::size_t i = 0; i < 4; ++i) r.push_back({i, 0, i, "c" + std::to_string(i), scores[i], "", "ok", {{"x", 1}}});
  auto a = aggregate(r);
  EXPECT_NEAR(a.mean, 0.5, 1e-15);
  EXPECT_TRUE(a.valid);
  EXPECT_EQ(a.clients, 4u);
  std::reverse(r.begin(), r.end());
  EXPECT_EQ(aggregate(r), a);  // order-independent
  r.pop_back();
  EXPECT_FALSE(aggregate(r).valid);
  std::vector<TrialReport> same(4, TrialReport{0, 0, 0, "", 0.37, "", "ok", {}});
  for (std::size_t i = 0; i < 4; ++i) same[i].client_id = "c" + std::to_string(i);
  EXPECT_DOUBLE_EQ(aggregate(same).mean, 0.37);
}

TEST(Aggregate, DuplicateClientCountsOnceAndMixedParamsThrow) {
  std::vector<TrialReport> r{{0, 0, 0, "a", 1.0, "", "ok", {}}, {1, 0, 1, "a", 3.0, "", "ok", {}},
                             {2, 0, 2, "b", 2.0, "", "ok", {}}};
  const auto a = aggregate(r, 2);
  EXPECT_EQ(a.clients, 2u);
  EXPECT_DOUBLE_EQ(a.mean, 1.5);
  r.push_back({3, 0, 3, "c", 1.0, "", "ok", {{"x", 2}}});
  EXPECT_THROW(aggregate(r), ContractError);
}

TEST(Select, Stage1Examples) {
  const std::vector<std::vector<double>> groups{{0.0, 0.1, 0.2}, {0.0, 0.5, 0.6}};
  const auto s = stage1_select({agg(0.7, true, 1), agg(0.3, true, 2), agg(0.9, false, 3)}, groups);
  ASSERT_EQ(s.selected.size(), 1u);
  EXPECT_EQ(s.selected[0].params.at("amplitude"), 1);
  EXPECT_FALSE(s.warning);
  const std::vector<std::vector<double>> zeros{{0, 0, 0}, {0, 0}};
  EXPECT_EQ(stage1_select({agg(1e-9)}, zeros).selected.size(), 1u);
  const auto none = stage1_select({agg(0.5, false)}, zeros);
  EXPECT_TRUE(none.selected.empty());
  EXPECT_TRUE(none.warning);
  EXPECT_THROW(stage1_select({agg(1)}, {}), PreconditionError);
}

TEST(Select, Stage1MatchesBruteForce) {
  Rng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<std::vector<double>> groups(2);
    for (auto& g : groups)
      for (int i = 0; i < 40; ++i) g.push_back(rng.uniform());
    std::vector<AggregateScore> aggs;
    for (int i = 0; i < 100; ++i) aggs.push_back(agg(rng.uniform() * 1.1, rng.uniform() < 0.9, i));
    // Brute-force threshold: sorted order statistic with linear interpolation.
    auto p99 = [](std::vector<double> g) {
      std::sort(g.begin(), g.end());
      const double h = 0.99 * static_cast<double>(g.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(h));
      return g[lo] + (h - static_cast<double>(lo)) * (g[std::min(lo + 1, g.size() - 1)] - g[lo]);
    };
    const double t0 = p99(groups[0]), t1 = p99(groups[1]);
    std::vector<ParamMap> expect;
    for (const auto& a : aggs)
      if (a.valid && a.mean > t0 && a.mean > t1) expect.push_back(a.params);
    std::vector<ParamMap> got;
    for (const auto& a : stage1_select(aggs, groups).selected) got.push_back(a.params);
    EXPECT_EQ(got, expect);
  }
}

TEST(Select, Stage2Consistency) {
  auto rep = [](double p, std::initializer_list<double> scores) {
    std::vector<AggregateScore> v;
    for (double s : scores) v.push_back(agg(s, true, p));
    return v;
  };
  std::vector<AggregateScore> all;
  for (auto& v : {rep(1, {0.9, 0.8, 0.7, 0.6}), rep(2, {0.9, 0.8, 0.7, 0.1}), rep(3, {0.9, 0.1, 0.1, 0.6})})
    all.insert(all.end(), v.begin(), v.end());
  const std::vector<double> base{0.0, 0.2, 0.5};  // p99 = 0.494
  auto names = [](const TopSet& t) {
    std::vector<double> v;
    for (const auto& p : t.selected) v.push_back(p.at("amplitude"));
    return v;
  };
  EXPECT_EQ(names(stage2_select(all, base)), (std::vector<double>{1}));
  EXPECT_EQ(names(stage2_select(all, base, Consistency::majority)), (std::vector<double>{1, 2}));
  EXPECT_EQ(names(stage2_select(all, base, Consistency::mean)), (std::vector<double>{1, 2}));
  EXPECT_TRUE(stage2_select({}, base).selected.empty());
  EXPECT_THROW(stage2_select(all, {}), PreconditionError);
}

TEST(Coordinator, FourClientsTwoCombos) {
  const auto path = fresh_log("four");
  StudyCoordinator c(small_spec(2, 4), path);
  const std::vector<std::string> clients{"a", "b", "c", "d"};
  std::size_t reports = 0;
  for (int round = 0; round < 2; ++round)
    for (const auto& id : clients) {
      const auto w = c.next(id);
      ASSERT_EQ(w.kind, NextWork::Kind::assign);
      EXPECT_EQ(c.report(id, w.assignment.trial_id, fake_score(w.assignment), "d"), ReportOutcome::accepted);
      ++reports;
    }
  EXPECT_EQ(reports, 8u);
  EXPECT_TRUE(c.complete());
  const auto aggs = c.aggregates();
  ASSERT_EQ(aggs.size(), 2u);
  for (const auto& a : aggs) {
    EXPECT_TRUE(a.valid);
    EXPECT_EQ(a.clients, 4u);
  }
  EXPECT_EQ(c.next("a").kind, NextWork::Kind::done);
  EXPECT_EQ(read_aggregates(path).size(), 2u);
}

TEST(Coordinator, OneClientNeverFillsTwoSlotsOfAUnit) {
  StudyCoordinator c(small_spec(2, 4), fresh_log("distinct"));
  const auto w1 = c.next("a");
  const auto w2 = c.next("a");  // reconnect: same lease back
  EXPECT_EQ(w1.assignment, w2.assignment);
  c.report("a", w1.assignment.trial_id, 1.0, "");
  const auto w3 = c.next("a");
  ASSERT_EQ(w3.kind, NextWork::Kind::assign);
  EXPECT_NE(w3.assignment.unit, w1.assignment.unit);
  c.report("a", w3.assignment.trial_id, 1.0, "");
  EXPECT_EQ(c.next("a").kind, NextWork::Kind::wait);
  // A report for a second slot of the same unit is rejected.
  const auto other = w1.assignment.unit * 4 + (w1.assignment.slot + 1) % 4;
  EXPECT_EQ(c.report("a", other, 2.0, ""), ReportOutcome::rejected);
  EXPECT_EQ(c.report("a", w1.assignment.trial_id, 1.0, ""), ReportOutcome::duplicate);
  EXPECT_THROW(c.report("a", 999, 1.0, ""), ProtocolError);
}

TEST(Coordinator, ExpiredLeaseIsReissuedWithSameSeeds) {
  auto spec = small_spec(1, 1);
  spec.timeout_s = 0.05;
  StudyCoordinator c(spec, fresh_log("lease"));
  const auto w1 = c.next("dead");
  EXPECT_EQ(c.next("alive").kind, NextWork::Kind::wait);
  std::this_thread::sleep_for(std::chrono::milliseconds(80));
  const auto w2 = c.next("alive");
  ASSERT_EQ(w2.kind, NextWork::Kind::assign);
  EXPECT_EQ(w2.assignment, w1.assignment);
  c.report("alive", w2.assignment.trial_id, 0.5, "");
  EXPECT_TRUE(c.complete());
}

TEST(Coordinator, FailedReportFreesSlotForAnotherClient) {
  StudyCoordinator c(small_spec(1, 1), fresh_log("failed"));
  const auto w = c.next("x");
  c.report("x", w.assignment.trial_id, 0.0, "", "failed");
  EXPECT_EQ(c.next("x").kind, NextWork::Kind::wait);
  EXPECT_EQ(c.next("y").kind, NextWork::Kind::assign);
}

TEST(Coordinator, ResumeAfterCrashWithTornLine) {
  const auto spec = small_spec(6, 2, 9);
  const Runner runner = [](const Assignment& a) { return RunOutcome{fake_score(a), "d"}; };

  const auto ref_path = fresh_log("ref");
  StudyCoordinator ref(spec, ref_path);
  const auto expected = run_local(ref, 2, runner);

  const auto path = fresh_log("crash");
  {
    StudyCoordinator c(spec, path);
    for (int i = 0; i < 5; ++i) {
      const auto w = c.next_any();
      c.report_local(w.assignment, fake_score(w.assignment), "d");
    }
    c.next_any();  // leased, never reported
    c.halt();
    EXPECT_THROW(c.next_any(), IoError);
  }
  {
    std::ofstream out(path, std::ios::app);
    out << R"({"type":"report","report":{"trial_id":)";
  }
  StudyCoordinator resumed(spec, path);
  EXPECT_EQ(resumed.resumed_reports(), 5u);
  const auto got = run_local(resumed, 3, runner);
  EXPECT_EQ(outcome_set(got), outcome_set(expected));
  // Each unit aggregated exactly once in the log.
  const auto logged = read_aggregates(path);
  std::set<std::size_t> units;
  for (const auto& a : logged) EXPECT_TRUE(units.insert(a.unit).second);
  EXPECT_EQ(units.size(), 6u);

  // Resuming a complete log does no further work.
  StudyCoordinator again(spec, path);
  EXPECT_TRUE(again.complete());
  EXPECT_EQ(read_aggregates(path).size(), 6u);
}

TEST(Coordinator, RejectsForeignLog) {
  const auto path = fresh_log("foreign");
  { StudyCoordinator c(small_spec(2, 2, 1), path); }
  EXPECT_THROW(StudyCoordinator(small_spec(2, 2, 2), path), ConfigError);
}

TEST(Runner, LocalPoolUsesTrialRunner) {
  loop::TrialConfig base;
  base.substrate.kind = substrate::Kind::random;
  auto spec = small_spec(2, 2);
  StudyCoordinator c(spec, fresh_log("pool"));
  const auto aggs = run_local(c, 2, trial_runner(base));
  ASSERT_EQ(aggs.size(), 2u);
  // Each reported score equals a direct run of the same assignment.
  for (const auto& a : aggs)
    for (const auto& cs : a.scores) {
      Assignment as{a.unit * 2 + cs.slot, a.unit, cs.slot, a.replicate, a.params, spec.mode,
                    assignment_seeds(spec.seed, a.unit, cs.slot)};
      EXPECT_EQ(cs.score, loop::score(loop::run_trial(apply_assignment(base, as))));
    }
}

TEST(Runner, FailurePropagates) {
  StudyCoordinator c(small_spec(3, 1), fresh_log("throw"));
  const Runner bad = [](const Assignment&) -> RunOutcome { throw DataError("boom"); };
  EXPECT_THROW(run_local(c, 2, bad), DataError);
}
