#pragma once

#include <cstddef>
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace attnzone {

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  std::size_t samples = 0;
  double accuracy = 0.0;
  ClassScores macro;
  ClassScores weighted;
  std::vector<ClassScores> per_class;
  std::vector<std::size_t> support;
  // confusion[truth][predicted]
  std::vector<std::vector<std::size_t>> confusion;
  std::optional<int> genuine_class;
  std::optional<double> far;
  std::optional<double> frr;
};

// Per-class precision/recall/F1 with macro (unweighted over classes that
// occur in truth or predictions) and support-weighted averages. With a
// genuine class, FAR = impostors accepted / impostors and
// FRR = genuines rejected / genuines.
inline MetricsReport compute_metrics(std::span<const int> predicted, std::span<const int> truth, std::size_t classes,
                                     std::optional<int> genuine_class = std::nullopt) {
  if (predicted.size() != truth.size()) {
    throw std::invalid_argument("compute_metrics: " + std::to_string(predicted.size()) + " predictions for " +
                                std::to_string(truth.size()) + " labels");
  }
  if (truth.empty()) throw std::invalid_argument("compute_metrics: no samples");
  MetricsReport r;
  r.samples = truth.size();
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    const int p = predicted[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= classes || static_cast<std::size_t>(p) >= classes) {
      throw std::invalid_argument("compute_metrics: label outside [0, " + std::to_string(classes) + ")");
    }
    ++r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }

  std::size_t correct = 0;
  std::size_t active = 0;
  const double n = static_cast<double>(r.samples);
  r.support.assign(classes, 0);
  r.per_class.assign(classes, {});
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t row = 0;
    std::size_t col = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      row += r.confusion[c][k];
      col += r.confusion[k][c];
    }
    const std::size_t hit = r.confusion[c][c];
    correct += hit;
    r.support[c] = row;
    ClassScores& s = r.per_class[c];
    s.precision = col > 0 ? static_cast<double>(hit) / static_cast<double>(col) : 0.0;
    s.recall = row > 0 ? static_cast<double>(hit) / static_cast<double>(row) : 0.0;
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    if (row > 0 || col > 0) {
      ++active;
      r.macro.precision += s.precision;
      r.macro.recall += s.recall;
      r.macro.f1 += s.f1;
    }
    const double w = static_cast<double>(row) / n;
    r.weighted.precision += w * s.precision;
    r.weighted.recall += w * s.recall;
    r.weighted.f1 += w * s.f1;
  }
  r.accuracy = static_cast<double>(correct) / n;
  r.macro.precision /= static_cast<double>(active);
  r.macro.recall /= static_cast<double>(active);
  r.macro.f1 /= static_cast<double>(active);

  if (genuine_class) {
    const int g = *genuine_class;
    if (g < 0 || static_cast<std::size_t>(g) >= classes) throw std::invalid_argument("compute_metrics: genuine class out of range");
    std::size_t impostors = 0, accepted = 0, genuines = 0, rejected = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == g) {
        ++genuines;
        if (predicted[i] != g) ++rejected;
      } else {
        ++impostors;
        if (predicted[i] == g) ++accepted;
      }
    }
    r.genuine_class = g;
    r.far = impostors > 0 ? static_cast<double>(accepted) / static_cast<double>(impostors) : 0.0;
    r.frr = genuines > 0 ? static_cast<double>(rejected) / static_cast<double>(genuines) : 0.0;
  }
  return r;
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  using nlohmann::ordered_json;
  auto scores = [](const ClassScores& s) {
    return ordered_json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
  };
  ordered_json j;
  j["samples"] = r.samples;
  j["accuracy"] = r.accuracy;
  j["macro"] = scores(r.macro);
  j["weighted"] = scores(r.weighted);
  ordered_json per = ordered_json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    ordered_json e = scores(r.per_class[c]);
    e["class"] = c;
    e["support"] = r.support[c];
    per.push_back(e);
  }
  j["per_class"] = per;
  j["confusion"] = r.confusion;
  if (r.genuine_class) {
    j["genuine_class"] = *r.genuine_class;
    j["far"] = *r.far;
    j["frr"] = *r.frr;
  }
  return j;
}

inline void write_confusion_csv(std::ostream& out, const MetricsReport& r) {
  out << "truth\\predicted";
  for (std::size_t c = 0; c < r.confusion.size(); ++c) out << ',' << c;
  out << '\n';
  for (std::size_t t = 0; t < r.confusion.size(); ++t) {
    out << t;
    for (std::size_t v : r.confusion[t]) out << ',' << v;
    out << '\n';
  }
}

inline std::string format_table(const MetricsReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "samples   " << r.samples << '\n';
  os << "accuracy  " << r.accuracy << '\n';
  os << "            precision  recall     f1\n";
  os << "macro       " << r.macro.precision << "     " << r.macro.recall << "     " << r.macro.f1 << '\n';
  os << "weighted    " << r.weighted.precision << "     " << r.weighted.recall << "     " << r.weighted.f1 << '\n';
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& s = r.per_class[c];
    os << "class " << std::setw(4) << std::left << c << "  " << std::right << s.precision << "     " << s.recall
       << "     " << s.f1 << "  (n=" << r.support[c] << ")\n";
  }
  if (r.genuine_class) {
    os << "FAR " << *r.far << "  FRR " << *r.frr << "  (genuine class " << *r.genuine_class << ")\n";
  }
  return os.str();
}

}  // namespace attnzone
