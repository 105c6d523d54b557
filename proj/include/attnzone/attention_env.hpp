#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <numeric>
#include <numbers>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "attnzone/data.hpp"
#include "attnzone/mapper.hpp"
#include "attnzone/rng.hpp"

namespace attnzone {

// Half-open zone [start, end) over the shuffled dimension axis.
struct AttentionState {
  int start = 0;
  int end = 0;

  int width() const { return end - start; }

  friend auto operator<=>(const AttentionState&, const AttentionState&) = default;
};

inline bool is_valid(const AttentionState& s, int k_prime, int min_len) {
  return s.start >= 0 && s.start < s.end && s.end <= k_prime && s.width() >= min_len;
}

enum class ActionKind : std::uint8_t { LeftShift = 0, RightShift = 1, Extend = 2, Condense = 3 };

inline constexpr std::size_t kActionCount = 4;
inline constexpr std::array<ActionKind, kActionCount> kAllActions{ActionKind::LeftShift, ActionKind::RightShift,
                                                                  ActionKind::Extend, ActionKind::Condense};

inline std::string_view action_name(ActionKind a) {
  switch (a) {
    case ActionKind::LeftShift: return "left_shift";
    case ActionKind::RightShift: return "right_shift";
    case ActionKind::Extend: return "extend";
    case ActionKind::Condense: return "condense";
  }
  return "?";
}

// Centred zone of width k_bar: {(K'-k_bar)/2, (K'+k_bar)/2}.
inline AttentionState initial_state(int k_prime, int k_bar) {
  if (k_prime <= 0 || k_bar <= 0) throw std::invalid_argument("initial_state: K' and initial width must be positive");
  if (k_bar >= k_prime) {
    throw std::invalid_argument("initial_state: initial width " + std::to_string(k_bar) + " must be below K'=" +
                                std::to_string(k_prime));
  }
  return {(k_prime - k_bar) / 2, (k_prime + k_bar) / 2};
}

// Moves the zone by `distance`, clips both indices into [0, K'], then
// restores a zone narrower than min_len by pushing end right, or start left
// when end is already at K'.
inline AttentionState apply_action(AttentionState s, ActionKind a, int distance, int k_prime, int min_len) {
  if (min_len < 1 || min_len > k_prime) {
    throw std::invalid_argument("apply_action: minimum zone length must be in [1, K']");
  }
  switch (a) {
    case ActionKind::LeftShift:
      s.start -= distance;
      s.end -= distance;
      break;
    case ActionKind::RightShift:
      s.start += distance;
      s.end += distance;
      break;
    case ActionKind::Extend:
      s.start -= distance;
      s.end += distance;
      break;
    case ActionKind::Condense:
      s.start += distance;
      s.end -= distance;
      break;
  }
  s.start = std::clamp(s.start, 0, k_prime);
  s.end = std::clamp(s.end, 0, k_prime);
  if (s.end - s.start < min_len) {
    s.end = s.start + min_len;
    if (s.end > k_prime) {
      s.end = k_prime;
      s.start = k_prime - min_len;
    }
  }
  return s;
}

// Draws the step uniformly from [1, max_step].
inline AttentionState apply_action(AttentionState s, ActionKind a, Rng& rng, int max_step, int k_prime, int min_len) {
  if (max_step < 1) throw std::invalid_argument("apply_action: maximum step must be >= 1");
  const int d = static_cast<int>(rng.uniform_int(1, max_step));
  return apply_action(s, a, d, k_prime, min_len);
}

inline void check_zone(const AttentionState& s, std::size_t length) {
  if (s.start < 0 || s.start >= s.end || static_cast<std::size_t>(s.end) > length) {
    throw std::invalid_argument("slice_zone: zone [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                                ") invalid for length " + std::to_string(length));
  }
}

inline std::vector<double> slice_zone(std::span<const double> expanded, const AttentionState& s) {
  check_zone(s, expanded.size());
  return {expanded.begin() + s.start, expanded.begin() + s.end};
}

inline Tensor2 slice_zones(const Tensor2& expanded, const AttentionState& s) {
  check_zone(s, expanded.cols);
  const auto width = static_cast<std::size_t>(s.width());
  Tensor2 out(expanded.rows, width);
  for (std::size_t i = 0; i < expanded.rows; ++i) {
    const auto src = expanded.row(i);
    std::copy_n(src.begin() + s.start, width, out.row(i).begin());
  }
  return out;
}

enum class RewardMode { Exponential, Traditional };

// Exponential: e^acc / (e - 1) - beta * width / K'. Traditional: e^acc.
inline double reward_value(double accuracy, int width, int k_prime, double beta, RewardMode mode) {
  if (mode == RewardMode::Traditional) return std::exp(accuracy);
  return std::exp(accuracy) / (std::numbers::e - 1.0) - beta * static_cast<double>(width) / static_cast<double>(k_prime);
}

struct RewardConfig {
  double beta = 0.1;
  RewardMode mode = RewardMode::Exponential;
  std::size_t probe_iterations = 200;
  std::size_t probe_subsample = 512;
  double validation_fraction = 0.2;
  std::size_t knn_k = 1;
  // Architecture and optimiser settings for probe training; iterations and
  // seed are overridden per zone.
  MapperHyper probe;
};

// Reward per exact zone. Concurrent readers, exclusive writers.
class RewardCache {
 public:
  std::optional<double> find(const AttentionState& s) const {
    std::shared_lock lock(mutex_);
    const auto it = values_.find(key(s));
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  void insert(const AttentionState& s, double reward) {
    std::unique_lock lock(mutex_);
    values_.emplace(key(s), reward);
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return values_.size();
  }

 private:
  static std::pair<int, int> key(const AttentionState& s) { return {s.start, s.end}; }

  mutable std::shared_mutex mutex_;
  std::map<std::pair<int, int>, double> values_;
};

// Scores a zone by probe-training the mapper on it and measuring 1-NN
// accuracy on a validation split carved from the training rows. Probe
// training is seeded from (run seed, start, end), so a recomputed reward
// equals the cached one.
class RewardModel {
 public:
  RewardModel(const SampleSet& expanded_train, RewardConfig config, std::uint64_t run_seed)
      : config_(std::move(config)), run_seed_(run_seed), dims_(static_cast<int>(expanded_train.channels())) {
    if (!(config_.validation_fraction > 0.0 && config_.validation_fraction < 1.0)) {
      throw std::invalid_argument("RewardModel: validation fraction must be in (0, 1)");
    }
    if (config_.probe_iterations < 1) throw std::invalid_argument("RewardModel: probe iterations must be >= 1");
    if (config_.beta < 0.0) throw std::invalid_argument("RewardModel: beta must be >= 0");
    Split split = stratified_split(expanded_train, config_.validation_fraction, derive_seed(run_seed, "reward-validation"));
    SampleSet probe = std::move(split.train);
    if (config_.probe_subsample > 0 && probe.size() > config_.probe_subsample) {
      std::vector<std::size_t> rows(probe.size());
      std::iota(rows.begin(), rows.end(), std::size_t{0});
      Rng rng(derive_seed(run_seed, "reward-probe-subsample"));
      rng.shuffle(std::span(rows));
      rows.resize(config_.probe_subsample);
      std::sort(rows.begin(), rows.end());
      probe = probe.select(rows);
    }
    probe_ = std::move(probe);
    validation_ = std::move(split.test);
  }

  int dims() const { return dims_; }
  const RewardConfig& config() const { return config_; }

  double reward(const AttentionState& s) {
    if (auto hit = cache_.find(s)) return *hit;
    const double acc = probe_accuracy(s);
    const double r = reward_value(acc, s.width(), dims_, config_.beta, config_.mode);
    cache_.insert(s, r);
    ++evaluations_;
    return r;
  }

  double probe_accuracy(const AttentionState& s) const {
    if (s.width() < static_cast<int>(kConvWidth)) {
      throw std::invalid_argument("evaluate_reward: zone width " + std::to_string(s.width()) +
                                  " narrower than conv kernel width 2");
    }
    const Tensor2 train_zones = slice_zones(probe_.samples(), s);
    const Tensor2 val_zones = slice_zones(validation_.samples(), s);
    MapperHyper hyper = config_.probe;
    hyper.iterations = config_.probe_iterations;
    hyper.seed = derive_seed(run_seed_, "reward-probe",
                             (static_cast<std::uint64_t>(static_cast<std::uint32_t>(s.start)) << 32) |
                                 static_cast<std::uint32_t>(s.end));
    const TrainedMapper trained = train_mapper(train_zones, probe_.labels(), probe_.class_count(), hyper);
    const FeatureBank bank = build_feature_bank(trained.net, train_zones, probe_.labels());
    const Tensor2 val_features = extract_features(trained.net, val_zones);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < val_features.rows; ++i) {
      if (knn_predict(bank, val_features.row(i), config_.knn_k) == validation_.label(i)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(validation_.size());
  }

  const RewardCache& cache() const { return cache_; }
  std::size_t evaluations() const { return evaluations_; }
  // Rows the reward ever reads: probe-training plus validation rows.
  std::size_t rows_used() const { return probe_.size() + validation_.size(); }
  std::size_t probe_rows() const { return probe_.size(); }
  std::size_t validation_rows() const { return validation_.size(); }

 private:
  RewardConfig config_;
  std::uint64_t run_seed_;
  int dims_;
  SampleSet probe_;
  SampleSet validation_;
  RewardCache cache_;
  std::size_t evaluations_ = 0;
};

}  // namespace attnzone
