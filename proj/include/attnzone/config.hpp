#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "attnzone/attention_env.hpp"
#include "attnzone/data.hpp"
#include "attnzone/dqn.hpp"
#include "attnzone/mapper.hpp"

namespace attnzone {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every field has a default; JSON keys match the member names.
struct PipelineConfig {
  std::string data;
  std::uint64_t seed = 42;
  std::size_t k_prime = 0;  // 0: four times the channel count
  int k_bar = 128;
  int min_len = 10;
  int max_step = 8;
  double gamma = 0.8;
  double epsilon = 0.2;
  double epsilon_increment = 0.002;
  double epsilon_max = 0.95;
  EpsilonConvention epsilon_convention = EpsilonConvention::Greedy;
  std::size_t episodes = 50;
  std::size_t steps = 50;
  double dqn_learning_rate = 0.01;
  std::size_t memory_size = 2000;
  std::size_t dqn_batch_size = 32;
  std::size_t target_sync = 100;
  std::size_t dqn_hidden = 32;
  double beta = 0.1;
  RewardMode reward_mode = RewardMode::Exponential;
  std::size_t probe_iterations = 200;
  std::size_t probe_subsample = 512;
  double validation_fraction = 0.2;
  double mapper_learning_rate = 0.001;
  double l2_lambda = 0.001;
  std::size_t mapper_iterations = 2000;
  std::size_t mapper_batch_size = 128;
  std::size_t conv_depth = 10;
  std::size_t fc_units = 100;
  bool conv_bias = true;
  double test_fraction = 0.25;
  std::size_t knn_k = 1;
  std::size_t bank_max = 0;  // 0: whole training split
  bool normalize = false;
  Rounding channel_rounding = Rounding::HalfAwayFromZero;
  std::optional<int> genuine_class;
  std::string output_dir = "out";

  MapperHyper mapper_hyper() const {
    MapperHyper h;
    h.learning_rate = mapper_learning_rate;
    h.l2_lambda = l2_lambda;
    h.iterations = mapper_iterations;
    h.batch_size = mapper_batch_size;
    h.conv_depth = conv_depth;
    h.fc_units = fc_units;
    h.conv_bias = conv_bias;
    return h;
  }

  RewardConfig reward_config() const {
    RewardConfig r;
    r.beta = beta;
    r.mode = reward_mode;
    r.probe_iterations = probe_iterations;
    r.probe_subsample = probe_subsample;
    r.validation_fraction = validation_fraction;
    r.knn_k = knn_k;
    r.probe = mapper_hyper();
    return r;
  }

  AgentConfig agent_config() const {
    return {gamma, dqn_learning_rate, dqn_batch_size, memory_size, target_sync, dqn_hidden};
  }

  EpsilonSchedule epsilon_schedule() const { return {epsilon, epsilon_increment, epsilon_max, epsilon_convention}; }
};

namespace detail {

inline const char* to_string(EpsilonConvention c) { return c == EpsilonConvention::Greedy ? "greedy" : "standard"; }
inline const char* to_string(RewardMode m) { return m == RewardMode::Exponential ? "exponential" : "traditional"; }
inline const char* to_string(Rounding r) { return r == Rounding::HalfAwayFromZero ? "half_away" : "truncate"; }

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: field '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["data"] = c.data;
  j["seed"] = c.seed;
  j["k_prime"] = c.k_prime;
  j["k_bar"] = c.k_bar;
  j["min_len"] = c.min_len;
  j["max_step"] = c.max_step;
  j["gamma"] = c.gamma;
  j["epsilon"] = c.epsilon;
  j["epsilon_increment"] = c.epsilon_increment;
  j["epsilon_max"] = c.epsilon_max;
  j["epsilon_convention"] = detail::to_string(c.epsilon_convention);
  j["episodes"] = c.episodes;
  j["steps"] = c.steps;
  j["dqn_learning_rate"] = c.dqn_learning_rate;
  j["memory_size"] = c.memory_size;
  j["dqn_batch_size"] = c.dqn_batch_size;
  j["target_sync"] = c.target_sync;
  j["dqn_hidden"] = c.dqn_hidden;
  j["beta"] = c.beta;
  j["reward_mode"] = detail::to_string(c.reward_mode);
  j["probe_iterations"] = c.probe_iterations;
  j["probe_subsample"] = c.probe_subsample;
  j["validation_fraction"] = c.validation_fraction;
  j["mapper_learning_rate"] = c.mapper_learning_rate;
  j["l2_lambda"] = c.l2_lambda;
  j["mapper_iterations"] = c.mapper_iterations;
  j["mapper_batch_size"] = c.mapper_batch_size;
  j["conv_depth"] = c.conv_depth;
  j["fc_units"] = c.fc_units;
  j["conv_bias"] = c.conv_bias;
  j["test_fraction"] = c.test_fraction;
  j["knn_k"] = c.knn_k;
  j["bank_max"] = c.bank_max;
  j["normalize"] = c.normalize;
  j["channel_rounding"] = detail::to_string(c.channel_rounding);
  j["genuine_class"] = c.genuine_class ? nlohmann::ordered_json(*c.genuine_class) : nlohmann::ordered_json(nullptr);
  j["output_dir"] = c.output_dir;
  return j;
}

inline void validate(const PipelineConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
  };
  require(c.min_len >= static_cast<int>(kConvWidth), "min_len must be >= 2 (conv kernel width)");
  require(c.k_bar >= c.min_len, "k_bar must be >= min_len");
  require(c.max_step >= 1, "max_step must be >= 1");
  require(c.gamma >= 0.0 && c.gamma <= 1.0, "gamma must be in [0, 1]");
  require(c.epsilon >= 0.0 && c.epsilon <= 1.0, "epsilon must be in [0, 1]");
  require(c.epsilon_max >= 0.0 && c.epsilon_max <= 1.0, "epsilon_max must be in [0, 1]");
  require(c.epsilon_increment >= 0.0, "epsilon_increment must be >= 0");
  require(c.episodes >= 1 && c.steps >= 1, "episodes and steps must be >= 1");
  require(c.dqn_learning_rate > 0.0 && c.mapper_learning_rate > 0.0, "learning rates must be positive");
  require(c.memory_size >= 1 && c.dqn_batch_size >= 1 && c.dqn_hidden >= 1, "DQN sizes must be positive");
  require(c.beta >= 0.0, "beta must be >= 0");
  require(c.probe_iterations >= 1, "probe_iterations must be >= 1");
  require(c.validation_fraction > 0.0 && c.validation_fraction < 1.0, "validation_fraction must be in (0, 1)");
  require(c.test_fraction > 0.0 && c.test_fraction < 1.0, "test_fraction must be in (0, 1)");
  require(c.l2_lambda >= 0.0, "l2_lambda must be >= 0");
  require(c.conv_depth >= 1 && c.fc_units >= 1, "conv_depth and fc_units must be >= 1");
  require(c.knn_k >= 1, "knn_k must be >= 1");
}

// Missing keys keep their defaults; unknown keys are rejected.
inline PipelineConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  PipelineConfig c;
  const auto known = to_json(c);
  for (const auto& item : j.items()) {
    const std::string& key = item.key();
    if (!known.contains(key)) throw ConfigError("config: unknown key '" + key + "'");
  }
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) detail::read_field(j, key, field);
  };
  auto enum_field = [&](const char* key, auto& field, auto parse) {
    if (!j.contains(key)) return;
    std::string text;
    detail::read_field(j, key, text);
    field = parse(text);
  };
  opt("data", c.data);
  opt("seed", c.seed);
  opt("k_prime", c.k_prime);
  opt("k_bar", c.k_bar);
  opt("min_len", c.min_len);
  opt("max_step", c.max_step);
  opt("gamma", c.gamma);
  opt("epsilon", c.epsilon);
  opt("epsilon_increment", c.epsilon_increment);
  opt("epsilon_max", c.epsilon_max);
  enum_field("epsilon_convention", c.epsilon_convention, [](const std::string& s) {
    if (s == "greedy") return EpsilonConvention::Greedy;
    if (s == "standard") return EpsilonConvention::Standard;
    throw ConfigError("config: epsilon_convention must be 'greedy' or 'standard', got '" + s + "'");
  });
  opt("episodes", c.episodes);
  opt("steps", c.steps);
  opt("dqn_learning_rate", c.dqn_learning_rate);
  opt("memory_size", c.memory_size);
  opt("dqn_batch_size", c.dqn_batch_size);
  opt("target_sync", c.target_sync);
  opt("dqn_hidden", c.dqn_hidden);
  opt("beta", c.beta);
  enum_field("reward_mode", c.reward_mode, [](const std::string& s) {
    if (s == "exponential") return RewardMode::Exponential;
    if (s == "traditional") return RewardMode::Traditional;
    throw ConfigError("config: reward_mode must be 'exponential' or 'traditional', got '" + s + "'");
  });
  opt("probe_iterations", c.probe_iterations);
  opt("probe_subsample", c.probe_subsample);
  opt("validation_fraction", c.validation_fraction);
  opt("mapper_learning_rate", c.mapper_learning_rate);
  opt("l2_lambda", c.l2_lambda);
  opt("mapper_iterations", c.mapper_iterations);
  opt("mapper_batch_size", c.mapper_batch_size);
  opt("conv_depth", c.conv_depth);
  opt("fc_units", c.fc_units);
  opt("conv_bias", c.conv_bias);
  opt("test_fraction", c.test_fraction);
  opt("knn_k", c.knn_k);
  opt("bank_max", c.bank_max);
  opt("normalize", c.normalize);
  enum_field("channel_rounding", c.channel_rounding, [](const std::string& s) {
    if (s == "half_away") return Rounding::HalfAwayFromZero;
    if (s == "truncate") return Rounding::Truncate;
    throw ConfigError("config: channel_rounding must be 'half_away' or 'truncate', got '" + s + "'");
  });
  if (j.contains("genuine_class") && !j.at("genuine_class").is_null()) {
    int g = 0;
    detail::read_field(j, "genuine_class", g);
    c.genuine_class = g;
  }
  opt("output_dir", c.output_dir);
  validate(c);
  return c;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

inline std::uint64_t config_fingerprint(const PipelineConfig& c) { return fnv1a64(to_json(c).dump()); }

}  // namespace attnzone
