#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "neuroloop/analysis/frame.hpp"
#include "neuroloop/dqn/train.hpp"

using namespace neuroloop;
using namespace neuroloop::dqn;

namespace {

std::string temp(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("neuroloop_dqn_" + name);
  std::filesystem::remove(p);
  return p.string();
}

// Central differences of f over every flattened parameter of n.
template <typename F>
std::vector<double> numeric_gradient(const QNet& n, F f, double h = 1e-6) {
  auto p = n.flatten();
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = f(QNet::unflatten(p));
    p[i] = keep - h;
    const double down = f(QNet::unflatten(p));
    p[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

bool near_kink(const QNet& n, const Input& x) {
  for (double v : forward_pass(n, x).pre)
    if (std::abs(v) < 1e-4) return true;
  return false;
}

}  // namespace

TEST(QNet, ForwardExamples) {
  QNet zero;
  EXPECT_EQ(qnet_forward(zero, one_hot(1)), (QValues{0, 0, 0}));

  QNet n;
  for (std::size_t i = 0; i < 3; ++i) n.w1[i][i] = 1.0;  // hidden i copies input i
  n.w2[0] = {2, 0, 0, 0, 0, 0, 0, 0};
  n.w2[1] = {0, 3, 0, 0, 0, 0, 0, 0};
  n.w2[2] = {1, 1, 1, 0, 0, 0, 0, 0};
  n.b2 = {0.5, -0.5, 0.0};
  EXPECT_EQ(qnet_forward(n, one_hot(-1)), (QValues{2.5, -0.5, 1.0}));
  EXPECT_EQ(qnet_forward(n, one_hot(0)), (QValues{0.5, 2.5, 1.0}));

  n.b1[0] = -5.0;  // pre-activation -4 for sensor -1: rectified away
  EXPECT_EQ(qnet_forward(n, one_hot(-1)), (QValues{0.5, -0.5, 0.0}));
  EXPECT_THROW(one_hot(2), PreconditionError);
}

TEST(QNet, ActExamples) {
  Rng rng(1);
  EXPECT_EQ(act({1, 5, 2}, 0.0, rng), 1u);
  EXPECT_EQ(act({5, 5, 1}, 0.0, rng), 0u);
  std::array<int, 3> c{};
  for (int i = 0; i < 10000; ++i) ++c[act({9, 0, 0}, 1.0, rng)];
  // chi-square, df 2, critical 13.82 at p = 0.001
  double chi2 = 0;
  for (int k : c) chi2 += (k - 10000 / 3.0) * (k - 10000 / 3.0) / (10000 / 3.0);
  EXPECT_LT(chi2, 13.82);
  EXPECT_THROW(act({0, 0, 0}, 1.5, rng), PreconditionError);
}

TEST(QNet, GradientMatchesFiniteDifferences) {
  Rng rng(2024);
  int checked = 0;
  for (int trial = 0; trial < 150 && checked < 100; ++trial) {
    const auto n = QNet::random(rng);
    const auto x = one_hot(static_cast<int>(rng.below(3)) - 1);
    if (near_kink(n, x)) continue;
    const std::size_t a = rng.below(3);
    const double y = rng.uniform(-2, 2);
    const auto analytic = loss_gradient(n, x, a, y).first.flatten();
    const auto numeric = numeric_gradient(n, [&](const QNet& m) { return loss(m, x, a, y); });
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-3});
      EXPECT_LT(std::abs(analytic[i] - numeric[i]) / scale, 1e-5) << "param " << i;
    }
    ++checked;
  }
  EXPECT_EQ(checked, 100);
}

TEST(QNet, FlattenRoundTripAndJson) {
  Rng rng(3);
  const auto n = QNet::random(rng);
  EXPECT_EQ(QNet::unflatten(n.flatten()), n);
  EXPECT_EQ(n.flatten().size(), 59u);
  const nlohmann::json j = n;
  EXPECT_EQ(j.get<QNet>(), n);
}

TEST(Learner, DiscountFreeTargetIsReward) {
  Rng rng(4);
  const auto n = QNet::random(rng);
  EXPECT_DOUBLE_EQ(td_target(n, {0, 1, 0.7, 1}, 0.0), 0.7);
  const auto q = qnet_forward(n, one_hot(1));
  EXPECT_DOUBLE_EQ(td_target(n, {0, 1, 0.7, 1}, 0.5), 0.7 + 0.5 * std::max({q[0], q[1], q[2]}));
}

TEST(Learner, SingleStepIsGradientDescentOnTdLoss) {
  Rng rng(5);
  const auto init = QNet::random(rng);
  DqnHyperParams hp;
  hp.learning_rate = 0.1;
  hp.gamma = 0.9;
  Learner l(init, hp);
  const Transition t{-1, 2, 2.0, 0};
  const double y = t.reward + 0.9 * std::ranges::max(qnet_forward(init, one_hot(0)));
  l.learn_step(t);
  const auto g = numeric_gradient(init, [&](const QNet& m) { return loss(m, one_hot(-1), 2, y); });
  const auto before = init.flatten(), after = l.online().flatten();
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(after[i], before[i] - 0.1 * g[i], 1e-7);
}

TEST(Learner, TrainFreqAveragesPendingTransitions) {
  Rng rng(6);
  const auto init = QNet::random(rng);
  DqnHyperParams hp;
  hp.learning_rate = 0.05;
  hp.train_freq = 2;
  hp.gamma = 0.0;
  Learner l(init, hp);
  const Transition t1{0, 0, 1.0, 1}, t2{1, 2, -0.2, -1};
  EXPECT_LT(l.learn_step(t1), 0.0);  // no update yet
  EXPECT_EQ(l.online(), init);
  EXPECT_GE(l.learn_step(t2), 0.0);
  const auto g = numeric_gradient(init, [&](const QNet& m) {
    return 0.5 * (loss(m, one_hot(0), 0, 1.0) + loss(m, one_hot(1), 2, -0.2));
  });
  const auto before = init.flatten(), after = l.online().flatten();
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(after[i], before[i] - 0.05 * g[i], 1e-7);
}

TEST(Learner, TargetRefresh) {
  Rng rng(7);
  DqnHyperParams hp;
  hp.target_update_freq = 1;
  Learner every(QNet::random(rng), hp);
  for (int i = 0; i < 5; ++i) {
    every.learn_step({i % 3 - 1, static_cast<std::size_t>(i % 3), 1.0, 0});
    EXPECT_EQ(every.target(), every.online());
  }
  hp.target_update_freq = 3;
  const auto init = QNet::random(rng);
  Learner slow(init, hp);
  slow.learn_step({0, 0, 1.0, 0});
  slow.learn_step({0, 0, 1.0, 0});
  EXPECT_EQ(slow.target(), init);
  EXPECT_NE(slow.online(), init);
  slow.learn_step({0, 0, 1.0, 0});
  EXPECT_EQ(slow.target(), slow.online());
}

TEST(Learner, NonFiniteLossRaisesTrainingError) {
  Rng rng(8);
  DqnHyperParams hp;
  hp.learning_rate = 1e150;
  Learner l(QNet::random(rng), hp);
  EXPECT_THROW(
      {
        for (int i = 0; i < 50; ++i) l.learn_step({0, 0, 2.0, 0});
      },
      TrainingError);
}

TEST(Schedule, EpsilonEndpoints) {
  DqnHyperParams hp;
  hp.final_epsilon = 0.1;
  hp.exploration_horizon = 0.25;
  EXPECT_DOUBLE_EQ(epsilon_at(0, 1000, hp), 1.0);
  EXPECT_DOUBLE_EQ(epsilon_at(125, 1000, hp), 0.55);
  EXPECT_DOUBLE_EQ(epsilon_at(250, 1000, hp), 0.1);
  EXPECT_DOUBLE_EQ(epsilon_at(999, 1000, hp), 0.1);
}

TEST(Hyperparameters, Validation) {
  DqnHyperParams hp;
  hp.exploration_horizon = 0.0;
  EXPECT_THROW(hp.validate(), ConfigError);
  EXPECT_THROW(apply_params({}, {{"momentum", 0.9}}), ConfigError);
  EXPECT_EQ(apply_params({}, to_param_map(hp = {})), DqnHyperParams{});
  const auto samples = sample_hyperparameters(50, 1);
  for (const auto& p : samples) EXPECT_NO_THROW(apply_params({}, p));
}

TEST(Training, BudgetAndSchema) {
  env::EnvConfig e;
  const auto run = train_dqn(e, {}, 150, 1);
  ASSERT_EQ(run.result.episodes.size(), 1u);
  EXPECT_EQ(run.result.episodes[0].steps.size(), 150u);
  EXPECT_EQ(run.losses.size(), 150u);
  std::stringstream ss;
  loop::write_trial_jsonl(ss, run.result);
  EXPECT_EQ(loop::read_trial_jsonl(ss), run.result);
}

TEST(Training, Deterministic) {
  env::EnvConfig e;
  const auto a = train_dqn(e, {}, 500, 42), b = train_dqn(e, {}, 500, 42);
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(a.result, b.result);
  EXPECT_EQ(a.net, b.net);
  EXPECT_NE(train_dqn(e, {}, 500, 43).losses, a.losses);
}

TEST(Training, ZeroLearningRateKeepsPolicy) {
  env::EnvConfig e;
  DqnHyperParams hp;
  hp.learning_rate = 0.0;
  const auto run = train_dqn(e, hp, 300, 5);
  Rng init_rng(derive_seed(5, 3));
  EXPECT_EQ(run.net, QNet::random(init_rng));
}

TEST(Training, BeatsRandomPolicy) {
  env::EnvConfig e;
  double dqn_food = 0, random_food = 0, dqn_score = 0, random_score = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto run = train_dqn(e, {}, 2000, seed);
    const auto rnd = random_policy(e, 2000, seed);
    dqn_food += run.result.episodes[0].food;
    random_food += rnd.episodes[0].food;
    dqn_score += loop::score(run.result);
    random_score += loop::score(rnd);
  }
  EXPECT_GT(dqn_food, 3 * random_food);
  EXPECT_GT(dqn_score, 3 * std::abs(random_score));
}

TEST(Training, CheckpointRoundTrip) {
  const auto path = temp("ckpt.json");
  Rng rng(9);
  const auto n = QNet::random(rng);
  save_checkpoint(path, n, {});
  EXPECT_EQ(load_checkpoint(path), n);
  std::ofstream(path) << "{\"net\": 3}";
  EXPECT_THROW(load_checkpoint(path), IoError);
  EXPECT_THROW(load_checkpoint(temp("missing.json")), IoError);
}

TEST(Training, SearchRunsThroughOptimizerLocalMode) {
  optimizer::StudySpec spec;
  spec.units = optimizer::schedule(sample_hyperparameters(3, 11), 1, 11);
  spec.quorum = 2;
  const auto path = temp("hpo.jsonl");
  optimizer::StudyCoordinator coord(spec, path);
  const auto aggs = optimizer::run_local(coord, 2, dqn_runner({}, {}, 300));
  ASSERT_EQ(aggs.size(), 3u);
  for (const auto& a : aggs) EXPECT_TRUE(a.valid);
  const auto frame = analysis::load_frame(path, "dqn");
  EXPECT_EQ(frame.rows.size(), 3u);
  EXPECT_EQ(frame.rows[0].params.size(), 6u);
}
