#pragma once

#include <algorithm>
#include <array>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnzone/attention_env.hpp"
#include "attnzone/numerics.hpp"
#include "attnzone/rng.hpp"

namespace attnzone {

using NormState = std::array<double, 2>;
using QValues = std::array<double, kActionCount>;

// Zone indices divided by K'.
inline NormState normalize_state(const AttentionState& s, int k_prime) {
  const double k = static_cast<double>(k_prime);
  return {static_cast<double>(s.start) / k, static_cast<double>(s.end) / k};
}

// Shared trunk 2 -> hidden (ReLU), advantage head hidden -> 4, value head
// hidden -> 1.
struct DuelingNet {
  DenseLayer trunk;
  DenseLayer advantage;
  DenseLayer value;

  static DuelingNet make(Rng& rng, std::size_t hidden = 32) {
    return {make_dense(2, hidden, Activation::ReLU, rng), make_dense(hidden, kActionCount, Activation::Identity, rng),
            make_dense(hidden, 1, Activation::Identity, rng)};
  }

  std::size_t param_count() const { return trunk.param_count() + advantage.param_count() + value.param_count(); }

  std::vector<double> flatten() const {
    std::vector<double> flat;
    flat.reserve(param_count());
    append_params(flat, trunk.weights, trunk.biases);
    append_params(flat, advantage.weights, advantage.biases);
    append_params(flat, value.weights, value.biases);
    return flat;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != param_count()) throw std::invalid_argument("DuelingNet::assign: wrong parameter count");
    std::size_t at = read_params(flat, 0, trunk.weights, trunk.biases);
    at = read_params(flat, at, advantage.weights, advantage.biases);
    read_params(flat, at, value.weights, value.biases);
  }

  friend bool operator==(const DuelingNet&, const DuelingNet&) = default;
};

struct DuelingPass {
  std::vector<double> hidden;
  QValues advantage{};
  double value = 0.0;
  QValues q{};
  std::size_t best_advantage = 0;  // lowest ordinal on ties
};

// Q(s,a) = V(s) + A(s,a) - max_a' A(s,a').
inline DuelingPass dueling_forward(const DuelingNet& net, const NormState& state) {
  DuelingPass pass;
  pass.hidden = dense_forward(state, net.trunk);
  const auto adv = dense_forward(pass.hidden, net.advantage);
  pass.value = dense_forward(pass.hidden, net.value)[0];
  std::copy(adv.begin(), adv.end(), pass.advantage.begin());
  for (std::size_t a = 1; a < kActionCount; ++a) {
    if (pass.advantage[a] > pass.advantage[pass.best_advantage]) pass.best_advantage = a;
  }
  const double peak = pass.advantage[pass.best_advantage];
  for (std::size_t a = 0; a < kActionCount; ++a) pass.q[a] = pass.value + (pass.advantage[a] - peak);
  return pass;
}

inline QValues q_values(const DuelingNet& net, const NormState& state) { return dueling_forward(net, state).q; }

inline std::size_t argmax_action(const QValues& q) {
  std::size_t best = 0;
  for (std::size_t a = 1; a < q.size(); ++a) {
    if (q[a] > q[best]) best = a;
  }
  return best;
}

struct Transition {
  NormState state{};
  ActionKind action = ActionKind::LeftShift;
  double reward = 0.0;
  NormState next_state{};
};

// Fixed-capacity ring buffer; the oldest transition is overwritten first.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity = 2000) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayMemory: capacity must be positive");
    items_.reserve(capacity);
  }

  void push(const Transition& t) {
    if (items_.size() < capacity_) {
      items_.push_back(t);
    } else {
      items_[inserted_ % capacity_] = t;
    }
    ++inserted_;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t inserted() const { return inserted_; }

  // Oldest first.
  std::vector<Transition> contents() const {
    std::vector<Transition> out;
    out.reserve(items_.size());
    const std::size_t head = items_.size() < capacity_ ? 0 : inserted_ % capacity_;
    for (std::size_t k = 0; k < items_.size(); ++k) out.push_back(items_[(head + k) % items_.size()]);
    return out;
  }

  // Uniform sample without replacement.
  std::vector<Transition> sample(std::size_t count, Rng& rng) const {
    if (count > items_.size()) throw std::invalid_argument("ReplayMemory::sample: not enough transitions");
    std::vector<std::size_t> idx(items_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<Transition> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t j = k + rng.index(idx.size() - k);
      std::swap(idx[k], idx[j]);
      out.push_back(items_[idx[k]]);
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t inserted_ = 0;
  std::vector<Transition> items_;
};

// Exploit means "take argmax Q". Greedy convention: exploit with
// probability epsilon (epsilon rises during a run). Standard: explore with
// probability epsilon.
enum class EpsilonConvention { Greedy, Standard };

struct EpsilonSchedule {
  double epsilon = 0.2;
  double increment = 0.002;
  double cap = 0.95;
  EpsilonConvention convention = EpsilonConvention::Greedy;

  double exploit_probability() const { return convention == EpsilonConvention::Greedy ? epsilon : 1.0 - epsilon; }
};

// One increment per environment step, capped.
inline EpsilonSchedule epsilon_update(EpsilonSchedule s) {
  s.epsilon = std::min(s.epsilon + s.increment, s.cap);
  return s;
}

inline ActionKind select_action(const DuelingNet& net, const NormState& state, const EpsilonSchedule& sched, Rng& rng) {
  if (rng.uniform01() < sched.exploit_probability()) {
    return kAllActions[argmax_action(q_values(net, state))];
  }
  return kAllActions[rng.index(kActionCount)];
}

// Mean squared TD error over the batch for fixed targets; the gradient
// (when requested) is in DuelingNet::flatten() order.
inline double td_loss(const DuelingNet& net, std::span<const Transition> batch, std::span<const double> targets,
                      std::vector<double>* grad = nullptr) {
  if (batch.size() != targets.size() || batch.empty()) throw std::invalid_argument("td_loss: batch/target size mismatch");
  DenseGrad g_trunk(net.trunk), g_adv(net.advantage), g_val(net.value);
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const DuelingPass pass = dueling_forward(net, batch[i].state);
    const auto a = static_cast<std::size_t>(batch[i].action);
    const double err = targets[i] - pass.q[a];
    loss += err * err * inv;
    if (grad == nullptr) continue;
    const double dq = -2.0 * err * inv;
    std::array<double, kActionCount> d_adv{};
    d_adv[a] += dq;
    d_adv[pass.best_advantage] -= dq;
    const std::array<double, 1> d_val{dq};
    const std::array<double, 1> val_out{pass.value};
    auto d_hidden = dense_backward(pass.hidden, net.advantage, pass.advantage, d_adv, g_adv);
    const auto d_hidden_v = dense_backward(pass.hidden, net.value, val_out, d_val, g_val);
    for (std::size_t h = 0; h < d_hidden.size(); ++h) d_hidden[h] += d_hidden_v[h];
    dense_backward(batch[i].state, net.trunk, pass.hidden, d_hidden, g_trunk);
  }
  if (grad != nullptr) {
    grad->clear();
    grad->reserve(net.param_count());
    append_params(*grad, g_trunk.weights, g_trunk.biases);
    append_params(*grad, g_adv.weights, g_adv.biases);
    append_params(*grad, g_val.weights, g_val.biases);
  }
  return loss;
}

struct AgentConfig {
  double gamma = 0.8;
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t memory_size = 2000;
  // Train steps between target-network syncs; 0 bootstraps from the online
  // network itself.
  std::size_t target_sync = 100;
  std::size_t hidden = 32;
};

class DqnAgent {
 public:
  DqnAgent(const AgentConfig& config, const EpsilonSchedule& schedule, std::uint64_t seed)
      : config_(config), schedule_(schedule), memory_(config.memory_size) {
    if (config.batch_size == 0) throw std::invalid_argument("DqnAgent: batch size must be positive");
    Rng rng(seed);
    net_ = DuelingNet::make(rng, config.hidden);
    target_ = net_;
    adam_ = AdamState(net_.param_count(), config.learning_rate);
  }

  ActionKind act(const NormState& state, Rng& rng) const { return select_action(net_, state, schedule_, rng); }

  void remember(const Transition& t) { memory_.push(t); }

  // One TD update on a uniform replay batch; nullopt while the memory holds
  // fewer than batch_size transitions.
  std::optional<double> train_step(Rng& rng) {
    if (memory_.size() < config_.batch_size) return std::nullopt;
    const auto batch = memory_.sample(config_.batch_size, rng);
    const DuelingNet& bootstrap = config_.target_sync > 0 ? target_ : net_;
    std::vector<double> targets(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const QValues next = q_values(bootstrap, batch[i].next_state);
      targets[i] = batch[i].reward + config_.gamma * *std::max_element(next.begin(), next.end());
    }
    std::vector<double> grad;
    const double loss = td_loss(net_, batch, targets, &grad);
    auto params = net_.flatten();
    adam_step(params, grad, adam_);
    net_.assign(params);
    ++train_steps_;
    if (config_.target_sync > 0 && train_steps_ % config_.target_sync == 0) target_ = net_;
    return loss;
  }

  void update_epsilon() { schedule_ = epsilon_update(schedule_); }

  const DuelingNet& net() const { return net_; }
  const DuelingNet& target() const { return target_; }
  const ReplayMemory& memory() const { return memory_; }
  const EpsilonSchedule& schedule() const { return schedule_; }
  const AgentConfig& config() const { return config_; }
  std::size_t train_steps() const { return train_steps_; }

 private:
  AgentConfig config_;
  EpsilonSchedule schedule_;
  ReplayMemory memory_;
  DuelingNet net_;
  DuelingNet target_;
  AdamState adam_;
  std::size_t train_steps_ = 0;
};

template <typename Env>
concept ZoneEnvironment = requires(Env& env, const AttentionState& s) {
  { env.reward(s) } -> std::convertible_to<double>;
};

struct SearchConfig {
  int k_prime = 256;
  int k_bar = 128;
  int min_len = 10;
  int max_step = 8;
  std::size_t episodes = 50;
  std::size_t steps = 50;
};

struct TraceEntry {
  std::size_t step = 0;
  std::size_t episode = 0;
  ActionKind action = ActionKind::LeftShift;
  AttentionState state;  // zone after the action
  double reward = 0.0;
  double epsilon = 0.0;  // value used to pick the action
  std::optional<double> loss;
};

struct SearchResult {
  AttentionState best;
  double best_reward = 0.0;
  std::vector<TraceEntry> trace;

  // Mean reward of each episode, in order.
  std::vector<double> episode_means(std::size_t steps) const {
    std::vector<double> means;
    for (std::size_t i = 0; i + steps <= trace.size(); i += steps) {
      double total = 0.0;
      for (std::size_t k = i; k < i + steps; ++k) total += trace[k].reward;
      means.push_back(total / static_cast<double>(steps));
    }
    return means;
  }
};

namespace detail {

inline void record_step(SearchResult& result, TraceEntry entry) {
  if (result.trace.empty() || entry.reward > result.best_reward) {
    result.best = entry.state;
    result.best_reward = entry.reward;
  }
  result.trace.push_back(std::move(entry));
}

inline void check_search(const SearchConfig& cfg) {
  if (cfg.min_len < 1 || cfg.min_len > cfg.k_prime) throw std::invalid_argument("run_search: min_len must be in [1, K']");
  if (cfg.k_bar < cfg.min_len) throw std::invalid_argument("run_search: initial width below min_len");
  if (cfg.episodes == 0 || cfg.steps == 0) throw std::invalid_argument("run_search: episodes and steps must be positive");
}

}  // namespace detail

// Each episode restarts from the centred initial zone. Per step: pick an
// action, move the zone, score the new zone, store the transition, train,
// raise epsilon. The best zone is the first one reaching the maximum reward.
template <ZoneEnvironment Env>
SearchResult run_search(Env& env, DqnAgent& agent, const SearchConfig& cfg, Rng& rng) {
  detail::check_search(cfg);
  SearchResult result;
  result.trace.reserve(cfg.episodes * cfg.steps);
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.episodes; ++e) {
    AttentionState s = initial_state(cfg.k_prime, cfg.k_bar);
    for (std::size_t t = 0; t < cfg.steps; ++t, ++step) {
      const NormState from = normalize_state(s, cfg.k_prime);
      const double eps = agent.schedule().epsilon;
      const ActionKind a = agent.act(from, rng);
      const AttentionState next = apply_action(s, a, rng, cfg.max_step, cfg.k_prime, cfg.min_len);
      const double r = static_cast<double>(env.reward(next));
      agent.remember({from, a, r, normalize_state(next, cfg.k_prime)});
      const auto loss = agent.train_step(rng);
      agent.update_epsilon();
      detail::record_step(result, {step, e, a, next, r, eps, loss});
      s = next;
    }
  }
  return result;
}

// Same loop with uniformly random actions and no learning.
template <ZoneEnvironment Env>
SearchResult run_random_search(Env& env, const SearchConfig& cfg, Rng& rng) {
  detail::check_search(cfg);
  SearchResult result;
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.episodes; ++e) {
    AttentionState s = initial_state(cfg.k_prime, cfg.k_bar);
    for (std::size_t t = 0; t < cfg.steps; ++t, ++step) {
      const ActionKind a = kAllActions[rng.index(kActionCount)];
      s = apply_action(s, a, rng, cfg.max_step, cfg.k_prime, cfg.min_len);
      detail::record_step(result, {step, e, a, s, static_cast<double>(env.reward(s)), 0.0, std::nullopt});
    }
  }
  return result;
}

inline void write_trace_csv(std::ostream& out, const SearchResult& result) {
  out << "step,start,end,reward,epsilon,loss\n";
  out.precision(17);
  for (const auto& e : result.trace) {
    out << e.step << ',' << e.state.start << ',' << e.state.end << ',' << e.reward << ',' << e.epsilon << ',';
    if (e.loss) out << *e.loss;
    out << '\n';
  }
}

}  // namespace attnzone
