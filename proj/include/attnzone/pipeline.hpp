#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnzone/artifact.hpp"
#include "attnzone/attention_env.hpp"
#include "attnzone/config.hpp"
#include "attnzone/data.hpp"
#include "attnzone/dqn.hpp"
#include "attnzone/mapper.hpp"
#include "attnzone/metrics.hpp"

namespace attnzone {

// Failure inside one stage of a training run; the message carries the stage
// name and seed needed to reproduce it.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, std::uint64_t seed, const std::string& what)
      : std::runtime_error("stage=" + stage + " seed=" + std::to_string(seed) + ": " + what), stage_(stage) {}

  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

template <typename F>
auto run_stage(const std::string& stage, std::uint64_t seed, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, seed, e.what());
  }
}

// Row counts reaching each stage; the search and mapper only ever see
// training-split rows.
struct RunStats {
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;
  std::size_t search_rows = 0;
  std::size_t mapper_rows = 0;
  std::size_t bank_rows = 0;
  std::size_t evaluated_rows = 0;
  std::size_t reward_evaluations = 0;
  std::size_t target_length = 0;
  int initial_width = 0;
};

struct TrainingRun {
  ModelArtifact artifact;
  MetricsReport metrics;
  SearchResult search;
  std::vector<double> mapper_loss;
  RunStats stats;
};

// K' and the initial zone width after resolving defaults: K' = 4K when
// unset; an initial width that does not fit below K' falls back to K'/2
// (never below min_len).
inline std::size_t resolved_target_length(const PipelineConfig& c, std::size_t channels) {
  return c.k_prime > 0 ? c.k_prime : 4 * channels;
}

inline int resolved_initial_width(const PipelineConfig& c, std::size_t target_length) {
  const int k_prime = static_cast<int>(target_length);
  if (c.k_bar < k_prime) return c.k_bar;
  return std::max(c.min_len, k_prime / 2);
}

// Shuffle plan -> zone -> mapper features -> k-NN, one sample at a time.
inline int classify_sample(const ModelArtifact& a, std::span<const double> sample) {
  if (sample.size() != a.channels()) {
    throw std::invalid_argument("inference: sample has " + std::to_string(sample.size()) + " channels, model expects K=" +
                                std::to_string(a.channels()));
  }
  std::vector<double> scaled;
  if (!a.scaling.empty()) {
    scaled.assign(sample.begin(), sample.end());
    a.scaling.apply(scaled);
    sample = scaled;
  }
  std::vector<double> zone(static_cast<std::size_t>(a.zone.width()));
  for (std::size_t j = 0; j < zone.size(); ++j) {
    zone[j] = sample[a.plan.permutation[static_cast<std::size_t>(a.zone.start) + j]];
  }
  return knn_predict(a.bank, extract_features(a.mapper, zone), a.knn_k);
}

struct InferenceResult {
  std::vector<int> labels;
  std::vector<double> latency_ms;
  double mean_ms = 0.0;
  double p95_ms = 0.0;
};

inline InferenceResult run_inference(const ModelArtifact& a, const Tensor2& samples) {
  if (samples.cols != a.channels()) {
    throw std::invalid_argument("inference: data has " + std::to_string(samples.cols) + " channels, model expects K=" +
                                std::to_string(a.channels()));
  }
  InferenceResult r;
  r.labels.resize(samples.rows);
  r.latency_ms.resize(samples.rows);
  for (std::size_t i = 0; i < samples.rows; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    r.labels[i] = classify_sample(a, samples.row(i));
    const auto t1 = std::chrono::steady_clock::now();
    r.latency_ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  if (!r.latency_ms.empty()) {
    r.mean_ms = std::accumulate(r.latency_ms.begin(), r.latency_ms.end(), 0.0) / static_cast<double>(samples.rows);
    std::vector<double> sorted = r.latency_ms;
    std::sort(sorted.begin(), sorted.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(sorted.size())));
    r.p95_ms = sorted[std::max<std::size_t>(rank, 1) - 1];
  }
  return r;
}

// Replicate-and-shuffle once, search for the best zone on the training
// split, retrain the mapper at full budget on that zone, build the feature
// bank and score the held-out split.
inline TrainingRun run_training_on_split(const PipelineConfig& cfg, const SampleSet& train_in, const SampleSet& test_in) {
  validate(cfg);
  const std::uint64_t seed = cfg.seed;
  TrainingRun run;
  if (train_in.channels() != test_in.channels()) {
    throw StageError("split", seed, "train and test channel counts differ");
  }
  if (train_in.class_count() < 2) throw StageError("split", seed, "training needs at least 2 classes");

  ChannelScaling scaling;
  SampleSet train = train_in;
  if (cfg.normalize) {
    scaling = ChannelScaling::fit(train_in);
    train = scaling.apply(train_in);
  }
  const std::size_t channels = train.channels();
  const std::size_t target_length = resolved_target_length(cfg, channels);
  const int initial_width = resolved_initial_width(cfg, target_length);

  const ShufflePlan plan = run_stage("replicate_shuffle", seed, [&] {
    return make_shuffle_plan(channels, target_length, derive_seed(seed, "replicate-shuffle"));
  });
  const SampleSet expanded = apply_plan(train, plan);

  const SearchConfig search_cfg{static_cast<int>(target_length), initial_width, cfg.min_len, cfg.max_step,
                                cfg.episodes, cfg.steps};
  RewardModel reward = run_stage("reward_setup", seed, [&] {
    return RewardModel(expanded, cfg.reward_config(), derive_seed(seed, "reward"));
  });
  run.search = run_stage("search", seed, [&] {
    DqnAgent agent(cfg.agent_config(), cfg.epsilon_schedule(), derive_seed(seed, "agent"));
    Rng rng(derive_seed(seed, "search"));
    return run_search(reward, agent, search_cfg, rng);
  });
  const AttentionState zone = run.search.best;

  const Tensor2 train_zones = slice_zones(expanded.samples(), zone);
  TrainedMapper mapper = run_stage("mapper", seed, [&] {
    MapperHyper hyper = cfg.mapper_hyper();
    hyper.seed = derive_seed(seed, "mapper");
    return train_mapper(train_zones, train.labels(), train.class_count(), hyper);
  });

  FeatureBank bank = run_stage("bank", seed, [&] {
    std::vector<std::size_t> rows(train.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    if (cfg.bank_max > 0 && rows.size() > cfg.bank_max) {
      Rng rng(derive_seed(seed, "bank"));
      rng.shuffle(std::span(rows));
      rows.resize(cfg.bank_max);
      std::sort(rows.begin(), rows.end());
    }
    FeatureBank b;
    b.features = Tensor2(rows.size(), mapper.net.feature_size());
    b.labels.resize(rows.size());
    b.source = mapper.net.fingerprint();
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto f = extract_features(mapper.net, train_zones.row(rows[k]));
      std::copy(f.begin(), f.end(), b.features.row(k).begin());
      b.labels[k] = train.label(rows[k]);
    }
    return b;
  });

  ModelArtifact& a = run.artifact;
  a.seed = seed;
  a.config = to_json(cfg);
  a.config_fingerprint = config_fingerprint(cfg);
  a.class_count = train.class_count();
  a.knn_k = cfg.knn_k;
  a.plan = plan;
  a.zone = zone;
  a.mapper = std::move(mapper.net);
  a.bank = std::move(bank);
  a.scaling = scaling;
  run.mapper_loss = std::move(mapper.loss_trace);

  run.metrics = run_stage("evaluate", seed, [&] {
    const InferenceResult inf = run_inference(a, test_in.samples());
    const std::size_t classes = std::max(a.class_count, test_in.class_count());
    return compute_metrics(inf.labels, test_in.labels(), classes, cfg.genuine_class);
  });

  run.stats.train_rows = train.size();
  run.stats.test_rows = test_in.size();
  run.stats.search_rows = reward.rows_used();
  run.stats.mapper_rows = train_zones.rows;
  run.stats.bank_rows = a.bank.size();
  run.stats.evaluated_rows = run.metrics.samples;
  run.stats.reward_evaluations = reward.evaluations();
  run.stats.target_length = target_length;
  run.stats.initial_width = initial_width;
  return run;
}

inline TrainingRun run_training(const PipelineConfig& cfg, const SampleSet& dataset) {
  const Split split = run_stage("split", cfg.seed, [&] {
    return stratified_split(dataset, cfg.test_fraction, derive_seed(cfg.seed, "split"));
  });
  return run_training_on_split(cfg, split.train, split.test);
}

inline TrainingRun run_training(const PipelineConfig& cfg) {
  if (cfg.data.empty()) throw StageError("load", cfg.seed, "config has no 'data' path");
  const SampleSet ds = run_stage("load", cfg.seed, [&] { return load_csv(cfg.data); });
  return run_training(cfg, ds);
}

inline nlohmann::ordered_json run_report(const TrainingRun& run) {
  nlohmann::ordered_json r;
  r["config"] = run.artifact.config;
  r["config_fingerprint"] = hex64(run.artifact.config_fingerprint);
  r["resolved"] = {{"target_length", run.stats.target_length}, {"initial_width", run.stats.initial_width}};
  r["best_zone"] = {{"start", run.artifact.zone.start},
                    {"end", run.artifact.zone.end},
                    {"reward", run.search.best_reward}};
  r["rows"] = {{"train", run.stats.train_rows},
               {"test", run.stats.test_rows},
               {"search", run.stats.search_rows},
               {"mapper", run.stats.mapper_rows},
               {"bank", run.stats.bank_rows},
               {"evaluated", run.stats.evaluated_rows}};
  r["reward_evaluations"] = run.stats.reward_evaluations;
  r["final_mapper_loss"] = run.mapper_loss.empty() ? 0.0 : run.mapper_loss.back();
  r["metrics"] = to_json(run.metrics);
  return r;
}

// model.art, metrics.json, confusion.csv, reward_trace.csv, report.json.
inline void write_run_outputs(const TrainingRun& run, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_artifact(run.artifact, (dir / "model.art").string());
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error((dir / name).string() + ": cannot open for writing");
    return out;
  };
  {
    auto out = open("metrics.json");
    out << to_json(run.metrics).dump(2) << '\n';
  }
  {
    auto out = open("confusion.csv");
    write_confusion_csv(out, run.metrics);
  }
  {
    auto out = open("reward_trace.csv");
    write_trace_csv(out, run.search);
  }
  {
    auto out = open("report.json");
    out << run_report(run).dump(2) << '\n';
  }
}

struct ResilienceRow {
  double fraction = 0.0;
  std::size_t kept_channels = 0;
  double accuracy = 0.0;
};

// For each fraction: keep a seeded random subset of channels, then a full
// training run. The channel draw uses a seed derived from the fraction; the
// training run keeps the configured seed, so fraction 1.0 reproduces the
// baseline run exactly.
inline std::vector<ResilienceRow> run_resilience(const PipelineConfig& cfg, const SampleSet& dataset,
                                                 std::span<const double> fractions) {
  std::vector<ResilienceRow> rows;
  for (double f : fractions) {
    const auto kept = run_stage("resilience", cfg.seed, [&] {
      return choose_channels(dataset.channels(), f, derive_seed(cfg.seed, "resilience", std::bit_cast<std::uint64_t>(f)),
                             cfg.channel_rounding);
    });
    const SampleSet sub = keep_channels(dataset, kept);
    const TrainingRun run = run_training(cfg, sub);
    rows.push_back({f, kept.size(), run.metrics.accuracy});
  }
  return rows;
}

inline void write_resilience_csv(std::ostream& out, std::span<const ResilienceRow> rows) {
  out << "fraction,kept_channels,accuracy\n";
  for (const auto& r : rows) out << r.fraction << ',' << r.kept_channels << ',' << r.accuracy << '\n';
}

}  // namespace attnzone
