#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attnzone/attnzone.hpp"

namespace az = attnzone;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  return out;
}

int cmd_train(const std::string& config_path, const std::string& output_override) {
  az::PipelineConfig cfg = az::load_config(config_path);
  if (!output_override.empty()) cfg.output_dir = output_override;
  const az::SampleSet ds = az::run_stage("load", cfg.seed, [&] { return az::load_csv(cfg.data); });
  const az::TrainingRun run = az::run_training(cfg, ds);
  az::write_run_outputs(run, cfg.output_dir);
  {
    auto out = open_out(cfg.output_dir + "/manifest.json");
    out << az::dataset_manifest(cfg.data, ds).dump(2) << '\n';
  }
  std::cout << "zone [" << run.artifact.zone.start << ", " << run.artifact.zone.end << ") of K'="
            << run.stats.target_length << ", reward " << run.search.best_reward << '\n';
  std::cout << az::format_table(run.metrics);
  std::cout << "wrote " << cfg.output_dir << "/{model.art,metrics.json,confusion.csv,reward_trace.csv,report.json,manifest.json}\n";
  return 0;
}

int cmd_evaluate(const std::string& model, const std::string& data, const std::string& out_path) {
  const az::ModelArtifact a = az::load_artifact(model);
  const az::SampleSet ds = az::load_csv(data);
  const az::InferenceResult inf = az::run_inference(a, ds.samples());
  std::optional<int> genuine;
  if (a.config.contains("genuine_class") && !a.config["genuine_class"].is_null()) {
    genuine = a.config["genuine_class"].get<int>();
  }
  const auto report = az::compute_metrics(inf.labels, ds.labels(), std::max(a.class_count, ds.class_count()), genuine);
  auto j = az::to_json(report);
  j["latency_ms"] = {{"mean", inf.mean_ms}, {"p95", inf.p95_ms}};
  if (out_path.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    open_out(out_path) << j.dump(2) << '\n';
    std::cout << az::format_table(report);
  }
  return 0;
}

int cmd_infer(const std::string& model, const std::string& data, const std::string& out_path) {
  const az::ModelArtifact a = az::load_artifact(model);
  const az::SampleSet ds = az::load_csv(data);
  const az::InferenceResult inf = az::run_inference(a, ds.samples());
  auto out = open_out(out_path);
  out << "row,predicted,label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) out << i << ',' << inf.labels[i] << ',' << ds.label(i) << '\n';
  std::cout << ds.size() << " predictions, mean " << inf.mean_ms << " ms, p95 " << inf.p95_ms << " ms\n";
  return 0;
}

int cmd_analyze(const std::string& data, const std::vector<std::size_t>& windows, const std::string& out_path) {
  const az::SampleSet ds = az::load_csv(data);
  const auto report = az::instability_report(ds.samples(), windows);
  if (out_path.empty()) {
    az::write_instability_csv(std::cout, report);
  } else {
    auto out = open_out(out_path);
    az::write_instability_csv(out, report);
  }
  return 0;
}

int cmd_resilience(const std::string& config_path, const std::vector<double>& fractions, const std::string& out_path) {
  const az::PipelineConfig cfg = az::load_config(config_path);
  const az::SampleSet ds = az::run_stage("load", cfg.seed, [&] { return az::load_csv(cfg.data); });
  const auto rows = az::run_resilience(cfg, ds, fractions);
  if (out_path.empty()) {
    az::write_resilience_csv(std::cout, rows);
  } else {
    auto out = open_out(out_path);
    az::write_resilience_csv(out, rows);
  }
  return 0;
}

int cmd_bench(const std::string& model, std::size_t repeats, const std::string& data) {
  const az::ModelArtifact a = az::load_artifact(model);
  az::Tensor2 samples;
  if (!data.empty()) {
    samples = az::load_csv(data).samples();
  } else {
    az::Rng rng(az::derive_seed(a.seed, "bench-latency"));
    samples = az::Tensor2(repeats, a.channels());
    for (double& v : samples.values) v = rng.normal();
  }
  if (samples.rows == 0) throw std::runtime_error("bench-latency: no samples");
  std::vector<double> latencies;
  latencies.reserve(repeats);
  for (std::size_t r = 0; r < repeats; ++r) {
    const std::size_t i = r % samples.rows;
    az::Tensor2 one(1, samples.cols);
    std::copy(samples.row(i).begin(), samples.row(i).end(), one.values.begin());
    latencies.push_back(az::run_inference(a, one).latency_ms.front());
  }
  std::vector<double> sorted = latencies;
  std::sort(sorted.begin(), sorted.end());
  const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(sorted.size())));
  nlohmann::ordered_json j;
  j["repeats"] = repeats;
  j["bank_rows"] = a.bank.size();
  j["mean_ms"] = mean;
  j["p95_ms"] = sorted[std::max<std::size_t>(rank, 1) - 1];
  j["max_ms"] = sorted.back();
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_synth(const az::PlantedBandSpec& spec, std::uint64_t seed, const std::string& out_path) {
  const az::SampleSet ds = az::make_planted_band(spec, seed);
  az::save_csv(ds, out_path);
  std::cout << "wrote " << ds.size() << " samples x " << ds.channels() << " channels to " << out_path << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-zone classifier for multichannel signals"};
  app.require_subcommand(1);

  std::string config, model, data, out, output_dir;
  std::vector<std::size_t> windows = az::default_windows();
  std::vector<double> fractions{0.2, 0.4, 0.6, 0.8, 1.0};
  std::size_t repeats = 1000;
  std::uint64_t seed = 42;
  az::PlantedBandSpec spec;

  auto* train = app.add_subcommand("train", "Search a zone, train the mapper, evaluate and save the model");
  train->add_option("--config", config, "Config JSON")->required();
  train->add_option("--output-dir", output_dir, "Override output_dir from the config");

  auto* evaluate = app.add_subcommand("evaluate", "Score a saved model on a labelled CSV");
  evaluate->add_option("--model", model)->required();
  evaluate->add_option("--data", data)->required();
  evaluate->add_option("--out", out, "Write metrics JSON here instead of stdout");

  auto* infer = app.add_subcommand("infer", "Write per-row predictions for a CSV");
  infer->add_option("--model", model)->required();
  infer->add_option("--data", data)->required();
  infer->add_option("--out", out, "Predictions CSV")->required();

  auto* analyze = app.add_subcommand("analyze", "Windowed instability statistics of a dataset");
  analyze->add_option("--data", data)->required();
  analyze->add_option("--windows", windows)->delimiter(',');
  analyze->add_option("--out", out, "CSV path (default stdout)");

  auto* resilience = app.add_subcommand("resilience", "Accuracy when training on random channel subsets");
  resilience->add_option("--config", config)->required();
  resilience->add_option("--fractions", fractions)->delimiter(',');
  resilience->add_option("--out", out, "CSV path (default stdout)");

  auto* bench = app.add_subcommand("bench-latency", "Single-sample inference latency");
  bench->add_option("--model", model)->required();
  bench->add_option("--repeats", repeats)->check(CLI::PositiveNumber);
  bench->add_option("--data", data, "Samples to classify (default: random normal rows)");

  auto* synth = app.add_subcommand("synth", "Generate a planted-band dataset");
  synth->add_option("--out", out)->required();
  synth->add_option("--seed", seed);
  synth->add_option("--channels", spec.channels);
  synth->add_option("--samples", spec.samples);
  synth->add_option("--classes", spec.classes);
  synth->add_option("--band-begin", spec.band_begin);
  synth->add_option("--band-end", spec.band_end);
  synth->add_option("--separation", spec.separation);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*train) return cmd_train(config, output_dir);
    if (*evaluate) return cmd_evaluate(model, data, out);
    if (*infer) return cmd_infer(model, data, out);
    if (*analyze) return cmd_analyze(data, windows, out);
    if (*resilience) return cmd_resilience(config, fractions, out);
    if (*bench) return cmd_bench(model, repeats, data);
    if (*synth) return cmd_synth(spec, seed, out);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error: " << msg << '\n';
    return 1;
  }
  return 1;
}
