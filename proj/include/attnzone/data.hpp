#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "attnzone/numerics.hpp"
#include "attnzone/rng.hpp"

namespace attnzone {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// I x K channel readings plus integer labels in [0, C). Immutable once built.
class SampleSet {
 public:
  SampleSet() = default;

  // class_count == 0 infers C = max label + 1.
  SampleSet(Tensor2 samples, std::vector<int> labels, std::size_t class_count = 0)
      : samples_(std::move(samples)), labels_(std::move(labels)), class_count_(class_count) {
    if (samples_.rows != labels_.size()) {
      throw std::invalid_argument("SampleSet: " + std::to_string(samples_.rows) + " rows but " +
                                  std::to_string(labels_.size()) + " labels");
    }
    if (samples_.rows == 0 || samples_.cols == 0) throw std::invalid_argument("SampleSet: empty sample matrix");
    int max_label = 0;
    for (int y : labels_) {
      if (y < 0) throw std::invalid_argument("SampleSet: negative label");
      max_label = std::max(max_label, y);
    }
    if (class_count_ == 0) class_count_ = static_cast<std::size_t>(max_label) + 1;
    if (static_cast<std::size_t>(max_label) >= class_count_) {
      throw std::invalid_argument("SampleSet: label " + std::to_string(max_label) + " >= class count " +
                                  std::to_string(class_count_));
    }
    for (std::size_t i = 0; i < samples_.rows; ++i) {
      for (double v : samples_.row(i)) {
        if (!std::isfinite(v)) throw std::invalid_argument("SampleSet: non-finite value in row " + std::to_string(i));
      }
    }
  }

  std::size_t size() const { return samples_.rows; }
  std::size_t channels() const { return samples_.cols; }
  std::size_t class_count() const { return class_count_; }
  const Tensor2& samples() const { return samples_; }
  const std::vector<int>& labels() const { return labels_; }
  std::span<const double> row(std::size_t i) const { return samples_.row(i); }
  int label(std::size_t i) const { return labels_[i]; }

  // Rows in the given order, keeping the class count.
  SampleSet select(std::span<const std::size_t> rows) const {
    Tensor2 out(rows.size(), channels());
    std::vector<int> labels(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto src = row(rows[r]);
      std::copy(src.begin(), src.end(), out.row(r).begin());
      labels[r] = labels_[rows[r]];
    }
    return {std::move(out), std::move(labels), class_count_};
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(class_count_, 0);
    for (int y : labels_) ++counts[static_cast<std::size_t>(y)];
    return counts;
  }

  friend bool operator==(const SampleSet&, const SampleSet&) = default;

 private:
  Tensor2 samples_;
  std::vector<int> labels_;
  std::size_t class_count_ = 0;
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t begin = 0;
  while (true) {
    const std::size_t comma = line.find(',', begin);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(begin));
      return cells;
    }
    cells.push_back(line.substr(begin, comma - begin));
    begin = comma + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline void append_double(std::string& out, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace detail

// Header `ch_0,...,ch_{K-1},label`, one sample per row. `source` names the
// input in error messages.
inline SampleSet parse_csv(std::istream& in, const std::string& source = "<csv>") {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(source + ": empty file, expected header row");
  ++line_no;
  const auto header = detail::split_commas(detail::trim(line));
  if (header.size() < 2 || detail::trim(header.back()) != "label") {
    throw ParseError(source + ":1: missing label column (header must end with 'label')");
  }
  const std::size_t channels = header.size() - 1;

  std::vector<double> values;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    const auto cells = detail::split_commas(trimmed);
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (cells.size() != header.size()) {
      throw ParseError(where + "expected " + std::to_string(header.size()) + " cells, found " +
                       std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < channels; ++c) {
      const std::string_view cell = detail::trim(cells[c]);
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
        throw ParseError(where + "non-numeric cell '" + std::string(cell) + "' in column " + std::to_string(c));
      }
      if (!std::isfinite(v)) {
        throw ParseError(where + "non-finite value '" + std::string(cell) + "' in column " + std::to_string(c));
      }
      values.push_back(v);
    }
    const std::string_view cell = detail::trim(cells.back());
    int y = 0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), y);
    if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || y < 0) {
      throw ParseError(where + "label '" + std::string(cell) + "' is not a non-negative integer");
    }
    labels.push_back(y);
  }
  if (labels.empty()) throw ParseError(source + ": no sample rows");
  const std::size_t rows = labels.size();
  return {Tensor2(rows, channels, std::move(values)), std::move(labels)};
}

inline SampleSet load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open file");
  return parse_csv(in, path);
}

// Shortest round-trip decimal for each value, `\n` line endings.
inline void write_csv(std::ostream& out, const SampleSet& ds) {
  std::string text;
  for (std::size_t c = 0; c < ds.channels(); ++c) {
    text += "ch_" + std::to_string(c) + ",";
  }
  text += "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.row(i)) {
      detail::append_double(text, v);
      text += ',';
    }
    text += std::to_string(ds.label(i));
    text += '\n';
  }
  out << text;
}

inline void save_csv(const SampleSet& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  write_csv(out, ds);
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open file");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes);
}

// {path, K, C, I, checksum}; checksum is FNV-1a 64 of the file bytes.
inline nlohmann::ordered_json dataset_manifest(const std::string& path, const SampleSet& ds) {
  nlohmann::ordered_json j;
  j["path"] = path;
  j["K"] = ds.channels();
  j["C"] = ds.class_count();
  j["I"] = ds.size();
  j["checksum"] = "fnv1a64:" + hex64(file_checksum(path));
  return j;
}

struct Split {
  SampleSet train;
  SampleSet test;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};

// Per-class shuffled split. The test total is round(fraction * I), shared
// across classes by largest remainder; every class keeps at least one row
// on each side. Row order within each side follows the input.
inline Split stratified_split(const SampleSet& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("stratified_split: test fraction must be in (0, 1)");
  }
  const std::size_t classes = ds.class_count();
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.label(i))].push_back(i);

  std::vector<std::size_t> quota(classes, 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t n = by_class[c].size();
    if (n == 0) continue;
    if (n < 2) {
      throw std::invalid_argument("stratified_split: class " + std::to_string(c) + " has " + std::to_string(n) +
                                  " sample(s), need at least 2");
    }
    const double exact = test_fraction * static_cast<double>(n);
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  const auto target = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ds.size())));
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; k < remainders.size() && assigned < target; ++k, ++assigned) {
    ++quota[remainders[k].second];
  }

  Rng rng(seed);
  std::vector<char> in_test(ds.size(), 0);
  for (std::size_t c = 0; c < classes; ++c) {
    auto& rows = by_class[c];
    if (rows.empty()) continue;
    quota[c] = std::clamp<std::size_t>(quota[c], 1, rows.size() - 1);
    rng.shuffle(std::span(rows));
    for (std::size_t k = 0; k < quota[c]; ++k) in_test[rows[k]] = 1;
  }
  Split split;
  for (std::size_t i = 0; i < ds.size(); ++i) (in_test[i] ? split.test_rows : split.train_rows).push_back(i);
  split.train = ds.select(split.train_rows);
  split.test = ds.select(split.test_rows);
  return split;
}

// Source channel for each of the K' expanded positions.
struct ShufflePlan {
  std::size_t source_channels = 0;
  std::vector<std::size_t> permutation;
  std::uint64_t seed = 0;

  std::size_t target_length() const { return permutation.size(); }

  friend bool operator==(const ShufflePlan&, const ShufflePlan&) = default;
};

// Replicate the channel index list h = floor(K'/K) + 1 times, shuffle, keep
// the first K'.
inline ShufflePlan make_shuffle_plan(std::size_t channels, std::size_t target_length, std::uint64_t seed) {
  if (channels == 0) throw std::invalid_argument("make_shuffle_plan: channel count must be positive");
  if (target_length <= channels) {
    throw std::invalid_argument("replicate_shuffle: target length K'=" + std::to_string(target_length) +
                                " must exceed channel count K=" + std::to_string(channels));
  }
  const std::size_t copies = target_length / channels + 1;
  std::vector<std::size_t> replicated(copies * channels);
  for (std::size_t i = 0; i < replicated.size(); ++i) replicated[i] = i % channels;
  Rng rng(seed);
  rng.shuffle(std::span(replicated));
  replicated.resize(target_length);
  return {channels, std::move(replicated), seed};
}

inline std::vector<double> apply_plan(std::span<const double> sample, const ShufflePlan& plan) {
  if (sample.size() != plan.source_channels) {
    throw std::invalid_argument("apply_plan: sample has " + std::to_string(sample.size()) +
                                " channels, plan expects " + std::to_string(plan.source_channels));
  }
  std::vector<double> out(plan.permutation.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = sample[plan.permutation[j]];
  return out;
}

inline SampleSet apply_plan(const SampleSet& ds, const ShufflePlan& plan) {
  if (ds.channels() != plan.source_channels) {
    throw std::invalid_argument("apply_plan: dataset has " + std::to_string(ds.channels()) +
                                " channels, plan expects " + std::to_string(plan.source_channels));
  }
  Tensor2 out(ds.size(), plan.target_length());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto src = ds.row(i);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = src[plan.permutation[j]];
  }
  return {std::move(out), ds.labels(), ds.class_count()};
}

struct Expanded {
  SampleSet data;
  ShufflePlan plan;
};

inline Expanded replicate_shuffle(const SampleSet& ds, std::size_t target_length, std::uint64_t seed) {
  ShufflePlan plan = make_shuffle_plan(ds.channels(), target_length, seed);
  SampleSet data = apply_plan(ds, plan);
  return {std::move(data), std::move(plan)};
}

enum class Rounding { HalfAwayFromZero, Truncate };

inline std::size_t kept_channel_count(std::size_t channels, double fraction, Rounding rounding) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw std::invalid_argument("subsample_channels: fraction must be in (0, 1]");
  }
  const double exact = fraction * static_cast<double>(channels);
  const double kept = rounding == Rounding::Truncate ? std::floor(exact) : std::round(exact);
  if (kept < 1.0) {
    throw std::invalid_argument("subsample_channels: fraction " + std::to_string(fraction) + " of " +
                                std::to_string(channels) + " channels keeps none");
  }
  return static_cast<std::size_t>(kept);
}

// Channels kept by subsample_channels, ascending.
inline std::vector<std::size_t> choose_channels(std::size_t channels, double fraction, std::uint64_t seed,
                                                Rounding rounding = Rounding::HalfAwayFromZero) {
  const std::size_t kept = kept_channel_count(channels, fraction, rounding);
  std::vector<std::size_t> all(channels);
  std::iota(all.begin(), all.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span(all));
  all.resize(kept);
  std::sort(all.begin(), all.end());
  return all;
}

inline SampleSet keep_channels(const SampleSet& ds, std::span<const std::size_t> kept) {
  Tensor2 out(ds.size(), kept.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < kept.size(); ++j) out(i, j) = ds.row(i)[kept[j]];
  }
  return {std::move(out), ds.labels(), ds.class_count()};
}

inline SampleSet subsample_channels(const SampleSet& ds, double fraction, std::uint64_t seed,
                                    Rounding rounding = Rounding::HalfAwayFromZero) {
  const auto kept = choose_channels(ds.channels(), fraction, seed, rounding);
  return keep_channels(ds, kept);
}

// Optional per-channel min-max scaling for non-EEG inputs.
struct ChannelScaling {
  std::vector<double> minimum;
  std::vector<double> maximum;

  bool empty() const { return minimum.empty(); }

  static ChannelScaling fit(const SampleSet& ds) {
    ChannelScaling s{std::vector<double>(ds.channels(), 0.0), std::vector<double>(ds.channels(), 0.0)};
    for (std::size_t c = 0; c < ds.channels(); ++c) {
      s.minimum[c] = s.maximum[c] = ds.row(0)[c];
    }
    for (std::size_t i = 1; i < ds.size(); ++i) {
      for (std::size_t c = 0; c < ds.channels(); ++c) {
        s.minimum[c] = std::min(s.minimum[c], ds.row(i)[c]);
        s.maximum[c] = std::max(s.maximum[c], ds.row(i)[c]);
      }
    }
    return s;
  }

  void apply(std::span<double> sample) const {
    for (std::size_t c = 0; c < sample.size(); ++c) {
      const double span = maximum[c] - minimum[c];
      sample[c] = span > 0.0 ? (sample[c] - minimum[c]) / span : 0.0;
    }
  }

  SampleSet apply(const SampleSet& ds) const {
    Tensor2 out = ds.samples();
    for (std::size_t i = 0; i < out.rows; ++i) apply(out.row(i));
    return {std::move(out), ds.labels(), ds.class_count()};
  }

  friend bool operator==(const ChannelScaling&, const ChannelScaling&) = default;
};

// Planted-band fixture: `informative` channels carry class means spaced
// `separation` standard deviations apart, every other channel is N(0, 1).
struct PlantedBandSpec {
  std::size_t channels = 16;
  std::size_t samples = 2000;
  std::size_t classes = 3;
  std::size_t band_begin = 4;
  std::size_t band_end = 8;  // exclusive
  double separation = 3.0;
};

inline SampleSet make_planted_band(const PlantedBandSpec& spec, std::uint64_t seed) {
  if (spec.band_end > spec.channels || spec.band_begin >= spec.band_end || spec.classes < 2) {
    throw std::invalid_argument("make_planted_band: invalid band or class count");
  }
  Rng rng(seed);
  Tensor2 x(spec.samples, spec.channels);
  std::vector<int> labels(spec.samples);
  const double centre = 0.5 * static_cast<double>(spec.classes - 1);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const auto y = static_cast<int>(i % spec.classes);
    labels[i] = y;
    const double mean = spec.separation * (static_cast<double>(y) - centre);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      const bool band = c >= spec.band_begin && c < spec.band_end;
      x(i, c) = rng.normal() + (band ? mean : 0.0);
    }
  }
  return {std::move(x), std::move(labels), spec.classes};
}

}  // namespace attnzone
