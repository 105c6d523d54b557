#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnzone/numerics.hpp"

namespace attnzone {

// Signal instability statistics over sliding windows. All STDs are
// population STDs.

struct SpreadStats {
  double std = 0.0;
  double range = 0.0;
};

// Mean over all length-w sliding windows of the window's STD and max-min.
inline SpreadStats windowed_time_stats(std::span<const double> channel, std::size_t w) {
  if (w == 0) throw std::invalid_argument("windowed_time_stats: window must be positive");
  if (channel.size() < w) {
    throw std::invalid_argument("windowed_time_stats: sequence length " + std::to_string(channel.size()) +
                                " shorter than window " + std::to_string(w));
  }
  const std::size_t windows = channel.size() - w + 1;
  const double inv_w = 1.0 / static_cast<double>(w);

  // Running sums are taken about the global mean to limit cancellation.
  double centre = 0.0;
  for (double v : channel) centre += v;
  centre /= static_cast<double>(channel.size());

  long double sum = 0.0L;
  long double sum_sq = 0.0L;
  std::deque<std::size_t> lo;  // indices with increasing values
  std::deque<std::size_t> hi;  // indices with decreasing values
  double total_std = 0.0;
  double total_range = 0.0;
  for (std::size_t i = 0; i < channel.size(); ++i) {
    const double v = channel[i] - centre;
    sum += v;
    sum_sq += static_cast<long double>(v) * v;
    while (!lo.empty() && channel[lo.back()] >= channel[i]) lo.pop_back();
    lo.push_back(i);
    while (!hi.empty() && channel[hi.back()] <= channel[i]) hi.pop_back();
    hi.push_back(i);
    if (i + 1 < w) continue;
    const std::size_t first = i + 1 - w;
    if (lo.front() < first) lo.pop_front();
    if (hi.front() < first) hi.pop_front();
    const double mean = static_cast<double>(sum) * inv_w;
    const double var = std::max(0.0, static_cast<double>(sum_sq) * inv_w - mean * mean);
    total_std += std::sqrt(var);
    total_range += channel[hi.front()] - channel[lo.front()];
    const double out = channel[first] - centre;
    sum -= out;
    sum_sq -= static_cast<long double>(out) * out;
  }
  return {total_std / static_cast<double>(windows), total_range / static_cast<double>(windows)};
}

inline double population_std(std::span<const double> xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(xs.size()));
}

// For each sample i < I - w, the mean cosine similarity with samples
// i+1..i+w; returns the STD and range of those per-sample means.
inline SpreadStats neighbor_correlation(const Tensor2& samples, std::size_t w) {
  if (w == 0) throw std::invalid_argument("neighbor_correlation: window must be positive");
  if (samples.rows <= w) {
    throw std::invalid_argument("neighbor_correlation: need more than " + std::to_string(w) + " samples, got " +
                                std::to_string(samples.rows));
  }
  std::vector<double> norms(samples.rows);
  for (std::size_t i = 0; i < samples.rows; ++i) {
    norms[i] = std::sqrt(squared_norm(samples.row(i)));
    if (norms[i] == 0.0) throw std::invalid_argument("neighbor_correlation: zero-norm sample at row " + std::to_string(i));
  }
  const std::size_t evaluated = samples.rows - w;
  std::vector<double> means(evaluated);
  for (std::size_t i = 0; i < evaluated; ++i) {
    const auto a = samples.row(i);
    double total = 0.0;
    for (std::size_t j = i + 1; j <= i + w; ++j) {
      const auto b = samples.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
      total += dot / (norms[i] * norms[j]);
    }
    means[i] = total / static_cast<double>(w);
  }
  const auto [mn, mx] = std::minmax_element(means.begin(), means.end());
  return {population_std(means), *mx - *mn};
}

struct InstabilityRow {
  std::size_t window = 0;
  SpreadStats time;
  SpreadStats correlation;
};

struct InstabilityReport {
  std::vector<InstabilityRow> rows;
  SpreadStats time_average;
  SpreadStats correlation_average;
};

inline const std::vector<std::size_t>& default_windows() {
  static const std::vector<std::size_t> windows{5, 50, 100, 500, 1000};
  return windows;
}

// Time statistics are computed per channel and averaged across channels.
inline InstabilityReport instability_report(const Tensor2& samples, std::span<const std::size_t> windows) {
  if (windows.empty()) throw std::invalid_argument("instability_report: no window sizes");
  InstabilityReport report;
  std::vector<double> channel(samples.rows);
  for (std::size_t w : windows) {
    InstabilityRow row{w, {}, {}};
    for (std::size_t c = 0; c < samples.cols; ++c) {
      for (std::size_t i = 0; i < samples.rows; ++i) channel[i] = samples(i, c);
      const auto s = windowed_time_stats(channel, w);
      row.time.std += s.std;
      row.time.range += s.range;
    }
    row.time.std /= static_cast<double>(samples.cols);
    row.time.range /= static_cast<double>(samples.cols);
    row.correlation = neighbor_correlation(samples, w);
    report.time_average.std += row.time.std;
    report.time_average.range += row.time.range;
    report.correlation_average.std += row.correlation.std;
    report.correlation_average.range += row.correlation.range;
    report.rows.push_back(row);
  }
  const auto n = static_cast<double>(windows.size());
  report.time_average.std /= n;
  report.time_average.range /= n;
  report.correlation_average.std /= n;
  report.correlation_average.range /= n;
  return report;
}

// Wide layout: one row per domain, STD/range pairs per window, then the
// average pair.
inline void write_instability_csv(std::ostream& out, const InstabilityReport& report) {
  out << "domain";
  for (const auto& r : report.rows) out << ',' << r.window << "_std," << r.window << "_range";
  out << ",average_std,average_range\n";
  const auto emit = [&](const char* name, auto pick, const SpreadStats& avg) {
    out << name;
    for (const auto& r : report.rows) {
      const SpreadStats& s = pick(r);
      out << ',' << s.std << ',' << s.range;
    }
    out << ',' << avg.std << ',' << avg.range << '\n';
  };
  emit("time", [](const InstabilityRow& r) -> const SpreadStats& { return r.time; }, report.time_average);
  emit("correlation", [](const InstabilityRow& r) -> const SpreadStats& { return r.correlation; },
       report.correlation_average);
}

}  // namespace attnzone
