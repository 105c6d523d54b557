#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "attnzone/dqn.hpp"

namespace az = attnzone;
using az::ActionKind;
using az::AttentionState;

namespace {

az::NormState random_state(az::Rng& rng) { return {rng.uniform01(), rng.uniform01()}; }

// Negative distance from a planted zone; no mapper involved.
struct DistanceEnv {
  AttentionState target;
  double reward(const AttentionState& s) const {
    return -(std::abs(s.start - target.start) + std::abs(s.end - target.end)) / 10.0;
  }
};

struct PlantedEnv {
  AttentionState planted;
  double reward(const AttentionState& s) const { return s == planted ? 1.0 : 0.0; }
};

}  // namespace

TEST(Dueling, ArgmaxAdvantageEqualsValue) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    az::Rng rng(seed);
    const auto net = az::DuelingNet::make(rng);
    const auto state = random_state(rng);
    const auto pass = az::dueling_forward(net, state);
    EXPECT_NEAR(pass.q[pass.best_advantage], pass.value, 1e-12);
    EXPECT_NEAR(*std::max_element(pass.q.begin(), pass.q.end()), pass.value, 1e-12);
  }
}

TEST(Dueling, ZeroAdvantageHeadGivesFlatQ) {
  az::Rng rng(1);
  auto net = az::DuelingNet::make(rng);
  std::fill(net.advantage.weights.values.begin(), net.advantage.weights.values.end(), 0.0);
  std::fill(net.advantage.biases.begin(), net.advantage.biases.end(), 0.0);
  const auto pass = az::dueling_forward(net, {0.3, 0.6});
  for (double q : pass.q) EXPECT_EQ(q, pass.value);
}

TEST(Dueling, HandSetHeads) {
  // Identity-like trunk on a constant input so V = 2 and A = [1, 3, 0, 3].
  az::DuelingNet net;
  net.trunk = {az::Tensor2(1, 2, 0.0), {1.0}, az::Activation::ReLU};
  net.advantage = {az::Tensor2(4, 1, std::vector<double>{1, 3, 0, 3}), {0, 0, 0, 0}, az::Activation::Identity};
  net.value = {az::Tensor2(1, 1, std::vector<double>{2}), {0}, az::Activation::Identity};
  const auto q = az::q_values(net, {0.5, 0.5});
  EXPECT_EQ(q, (az::QValues{0, 2, -1, 2}));
  EXPECT_EQ(az::argmax_action(q), 1u);
}

TEST(Dueling, ArgmaxTiesGoToLowestOrdinal) {
  EXPECT_EQ(az::argmax_action({1, 1, 0, 0}), 0u);
  EXPECT_EQ(az::argmax_action({0, 2, 2, 1}), 1u);
}

TEST(Dueling, TdLossGradientMatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    az::Rng rng(seed);
    auto net = az::DuelingNet::make(rng);
    for (double& b : net.trunk.biases) b = 0.05 + 0.1 * rng.uniform01();
    std::vector<az::Transition> batch(8);
    std::vector<double> targets(8);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      batch[i] = {random_state(rng), az::kAllActions[rng.index(4)], rng.normal(), random_state(rng)};
      targets[i] = rng.normal();
    }
    std::vector<double> grad;
    az::td_loss(net, batch, targets, &grad);
    const auto params = net.flatten();
    auto loss = [&](std::span<const double> p) {
      az::DuelingNet probe = net;
      probe.assign(p);
      return az::td_loss(probe, batch, targets);
    };
    EXPECT_LT(az::finite_difference_check(loss, params, grad), 1e-4) << "seed " << seed;
  }
}

TEST(ReplayMemory, EvictsOldestFirst) {
  az::ReplayMemory memory(3);
  for (int i = 0; i < 5; ++i) memory.push({{0, 0}, ActionKind::LeftShift, static_cast<double>(i), {0, 0}});
  EXPECT_EQ(memory.size(), 3u);
  EXPECT_EQ(memory.inserted(), 5u);
  const auto items = memory.contents();
  ASSERT_EQ(items.size(), 3u);
  EXPECT_EQ(items[0].reward, 2.0);
  EXPECT_EQ(items[2].reward, 4.0);
}

TEST(ReplayMemory, NeverExceedsCapacity) {
  az::ReplayMemory memory(2000);
  for (int i = 0; i < 2500; ++i) {
    memory.push({{0, 0}, ActionKind::Extend, static_cast<double>(i), {0, 0}});
    ASSERT_LE(memory.size(), 2000u);
  }
  for (const auto& t : memory.contents()) EXPECT_GE(t.reward, 500.0);
}

TEST(ReplayMemory, SampleWithoutReplacement) {
  az::ReplayMemory memory(10);
  for (int i = 0; i < 10; ++i) memory.push({{0, 0}, ActionKind::Extend, static_cast<double>(i), {0, 0}});
  az::Rng rng(2);
  auto batch = memory.sample(10, rng);
  std::vector<double> rewards;
  for (const auto& t : batch) rewards.push_back(t.reward);
  std::sort(rewards.begin(), rewards.end());
  for (int i = 0; i < 10; ++i) EXPECT_EQ(rewards[i], i);
  EXPECT_THROW(memory.sample(11, rng), std::invalid_argument);
}

TEST(Epsilon, IncrementAndCap) {
  az::EpsilonSchedule s;
  EXPECT_NEAR(az::epsilon_update(s).epsilon, 0.202, 1e-15);
  s.epsilon = 0.949;
  s = az::epsilon_update(s);
  EXPECT_EQ(s.epsilon, 0.95);
  EXPECT_EQ(az::epsilon_update(s).epsilon, 0.95);
}

TEST(Epsilon, MonotoneOverAFullRun) {
  az::EpsilonSchedule s;
  double prev = s.epsilon;
  for (int t = 0; t < 2500; ++t) {
    s = az::epsilon_update(s);
    ASSERT_GE(s.epsilon, prev);
    ASSERT_LE(s.epsilon, 0.95);
    prev = s.epsilon;
  }
  EXPECT_EQ(s.epsilon, 0.95);
}

TEST(SelectAction, GreedyWhenEpsilonOne) {
  az::Rng rng(4);
  const auto net = az::DuelingNet::make(rng);
  const az::NormState state{0.2, 0.7};
  const auto best = static_cast<ActionKind>(az::argmax_action(az::q_values(net, state)));
  az::EpsilonSchedule sched{1.0, 0.0, 1.0, az::EpsilonConvention::Greedy};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(az::select_action(net, state, sched, rng), best);
}

TEST(SelectAction, UniformWhenEpsilonZero) {
  az::Rng rng(5);
  const auto net = az::DuelingNet::make(rng);
  az::EpsilonSchedule sched{0.0, 0.0, 1.0, az::EpsilonConvention::Greedy};
  std::vector<int> counts(4, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<int>(az::select_action(net, {0.4, 0.6}, sched, rng))];
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (int c : counts) EXPECT_NEAR(c, n * 0.25, 3 * sigma);
}

TEST(SelectAction, StandardConventionFlipsMeaning) {
  az::EpsilonSchedule greedy{0.3, 0.0, 1.0, az::EpsilonConvention::Greedy};
  az::EpsilonSchedule standard{0.3, 0.0, 1.0, az::EpsilonConvention::Standard};
  EXPECT_DOUBLE_EQ(greedy.exploit_probability(), 0.3);
  EXPECT_DOUBLE_EQ(standard.exploit_probability(), 0.7);
}

TEST(Agent, SkipsTrainingUntilBatchAvailable) {
  az::AgentConfig cfg;
  cfg.batch_size = 4;
  az::DqnAgent agent(cfg, {}, 1);
  az::Rng rng(1);
  for (int i = 0; i < 3; ++i) {
    agent.remember({{0.1, 0.2}, ActionKind::Extend, 1.0, {0.1, 0.3}});
    EXPECT_FALSE(agent.train_step(rng));
  }
  agent.remember({{0.1, 0.2}, ActionKind::Extend, 1.0, {0.1, 0.3}});
  EXPECT_TRUE(agent.train_step(rng));
}

TEST(Agent, MyopicAgentFitsRepeatedTransition) {
  az::AgentConfig cfg;
  cfg.gamma = 0.0;
  cfg.batch_size = 8;
  az::DqnAgent agent(cfg, {}, 3);
  az::Rng rng(3);
  for (int i = 0; i < 8; ++i) agent.remember({{0.25, 0.75}, ActionKind::Condense, 1.5, {0.3, 0.7}});
  double loss = 1.0;
  for (int i = 0; i < 500; ++i) loss = *agent.train_step(rng);
  EXPECT_LT(loss, 1e-4);
  EXPECT_NEAR(az::q_values(agent.net(), {0.25, 0.75})[static_cast<int>(ActionKind::Condense)], 1.5, 1e-2);
}

TEST(Agent, TargetNetworkSyncCadence) {
  az::AgentConfig cfg;
  cfg.batch_size = 2;
  cfg.target_sync = 5;
  az::DqnAgent agent(cfg, {}, 7);
  az::Rng rng(7);
  for (int i = 0; i < 4; ++i) agent.remember({random_state(rng), ActionKind::LeftShift, rng.normal(), random_state(rng)});
  for (int i = 0; i < 4; ++i) agent.train_step(rng);
  EXPECT_NE(agent.net(), agent.target());
  agent.train_step(rng);
  EXPECT_EQ(agent.net(), agent.target());
}

TEST(Search, BestIsMaximumOfTrace) {
  az::SearchConfig cfg{64, 32, 10, 8, 5, 20};
  DistanceEnv env{{40, 56}};
  az::DqnAgent agent({}, {}, 2);
  az::Rng rng(2);
  const auto result = az::run_search(env, agent, cfg, rng);
  ASSERT_EQ(result.trace.size(), 100u);
  for (const auto& e : result.trace) {
    EXPECT_LE(e.reward, result.best_reward);
    EXPECT_TRUE(az::is_valid(e.state, 64, 10));
  }
  EXPECT_EQ(result.episode_means(20).size(), 5u);
}

TEST(Search, FindsPlantedZoneWhenVisited) {
  az::SearchConfig cfg{64, 32, 10, 8, 10, 30};
  PlantedEnv env{{0, 0}};
  az::Rng rng(1);
  const auto random = az::run_random_search(env, cfg, rng);
  env.planted = random.trace[7].state;
  az::Rng rng2(1);
  const auto again = az::run_random_search(env, cfg, rng2);
  EXPECT_EQ(again.best, env.planted);
  EXPECT_EQ(again.best_reward, 1.0);
}

TEST(Search, EpsilonRecordedAndRising) {
  az::SearchConfig cfg{64, 32, 10, 8, 3, 10};
  DistanceEnv env{{0, 10}};
  az::DqnAgent agent({}, {}, 4);
  az::Rng rng(4);
  const auto result = az::run_search(env, agent, cfg, rng);
  EXPECT_DOUBLE_EQ(result.trace.front().epsilon, 0.2);
  for (std::size_t i = 1; i < result.trace.size(); ++i) EXPECT_GE(result.trace[i].epsilon, result.trace[i - 1].epsilon);
}

TEST(Search, TraceCsv) {
  az::SearchConfig cfg{64, 32, 10, 8, 1, 3};
  DistanceEnv env{{0, 10}};
  az::DqnAgent agent({}, {}, 4);
  az::Rng rng(4);
  const auto result = az::run_search(env, agent, cfg, rng);
  std::ostringstream out;
  az::write_trace_csv(out, result);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,start,end,reward,epsilon,loss");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(line.back(), ',');
  }
  EXPECT_EQ(rows, 3);
}
