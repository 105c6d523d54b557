#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnzone/attention_env.hpp"
#include "attnzone/data.hpp"
#include "attnzone/mapper.hpp"

namespace attnzone {

class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything inference needs; no RNG and no training data beyond the bank.
struct ModelArtifact {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  std::uint64_t seed = 0;
  std::uint64_t config_fingerprint = 0;
  nlohmann::ordered_json config;  // echo of the training configuration
  std::size_t class_count = 0;
  std::size_t knn_k = 1;
  ShufflePlan plan;
  AttentionState zone;
  MapperNet mapper;
  FeatureBank bank;
  ChannelScaling scaling;  // empty unless the run normalised inputs

  std::size_t channels() const { return plan.source_channels; }
};

// Layout:
//   line 1  "ATTNZONE-ARTIFACT"
//   line 2  JSON header (single line): metadata, shapes, block list,
//           payload byte count and FNV-1a 64 checksum
//   rest    payload: the listed blocks back to back, little-endian
//           (f64 = IEEE-754 binary64, i32 = two's complement)
namespace artifact_detail {

inline constexpr std::string_view kMagic = "ATTNZONE-ARTIFACT";

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffU));
}

inline void put_f64(std::string& out, std::span<const double> values) {
  for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline void put_i32(std::string& out, std::span<const int> values) {
  for (int v : values) {
    const auto u = static_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xffU));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  void f64(std::span<double> out) {
    need(out.size() * 8);
    for (double& v : out) {
      std::uint64_t u = 0;
      for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[at_ + b])) << (8 * b);
      at_ += 8;
      v = std::bit_cast<double>(u);
    }
  }

  void i32(std::span<int> out) {
    need(out.size() * 4);
    for (int& v : out) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[at_ + b])) << (8 * b);
      at_ += 4;
      v = static_cast<int>(u);
    }
  }

  bool done() const { return at_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (at_ + n > bytes_.size()) throw ArtifactError("artifact: payload shorter than its block list");
  }

  std::string_view bytes_;
  std::size_t at_ = 0;
};

struct Block {
  std::string name;
  std::string dtype;
  std::size_t count;
};

inline std::vector<Block> blocks_for(const ModelArtifact& a) {
  std::vector<Block> blocks{
      {"conv.filters", "f64", a.mapper.conv.filters.values.size()},
      {"conv.biases", "f64", a.mapper.conv.biases.size()},
      {"fc.weights", "f64", a.mapper.fc.weights.values.size()},
      {"fc.biases", "f64", a.mapper.fc.biases.size()},
      {"out.weights", "f64", a.mapper.out.weights.values.size()},
      {"out.biases", "f64", a.mapper.out.biases.size()},
      {"bank.features", "f64", a.bank.features.values.size()},
      {"bank.labels", "i32", a.bank.labels.size()},
  };
  if (!a.scaling.empty()) {
    blocks.push_back({"scaling.min", "f64", a.scaling.minimum.size()});
    blocks.push_back({"scaling.max", "f64", a.scaling.maximum.size()});
  }
  return blocks;
}

}  // namespace artifact_detail

inline std::string serialize_artifact(const ModelArtifact& a) {
  using namespace artifact_detail;
  std::string payload;
  put_f64(payload, a.mapper.conv.filters.values);
  put_f64(payload, a.mapper.conv.biases);
  put_f64(payload, a.mapper.fc.weights.values);
  put_f64(payload, a.mapper.fc.biases);
  put_f64(payload, a.mapper.out.weights.values);
  put_f64(payload, a.mapper.out.biases);
  put_f64(payload, a.bank.features.values);
  put_i32(payload, a.bank.labels);
  if (!a.scaling.empty()) {
    put_f64(payload, a.scaling.minimum);
    put_f64(payload, a.scaling.maximum);
  }

  nlohmann::ordered_json h;
  h["format_version"] = a.format_version;
  h["seed"] = a.seed;
  h["config_fingerprint"] = hex64(a.config_fingerprint);
  h["config"] = a.config;
  h["channels"] = a.plan.source_channels;
  h["target_length"] = a.plan.target_length();
  h["class_count"] = a.class_count;
  h["knn_k"] = a.knn_k;
  h["plan"] = {{"seed", a.plan.seed}, {"permutation", a.plan.permutation}};
  h["zone"] = {{"start", a.zone.start}, {"end", a.zone.end}};
  h["mapper"] = {{"zone_length", a.mapper.zone_length()},
                 {"conv_depth", a.mapper.conv.depth()},
                 {"conv_bias", a.mapper.conv.use_bias},
                 {"fc_units", a.mapper.feature_size()}};
  h["bank"] = {{"rows", a.bank.features.rows}, {"cols", a.bank.features.cols}, {"source", hex64(a.bank.source)}};
  h["scaling"] = !a.scaling.empty();
  nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
  for (const auto& b : blocks_for(a)) blocks.push_back({{"name", b.name}, {"dtype", b.dtype}, {"count", b.count}});
  h["blocks"] = blocks;
  h["payload_bytes"] = payload.size();
  h["payload_checksum"] = "fnv1a64:" + hex64(fnv1a64(payload));

  std::string out(kMagic);
  out += '\n';
  out += h.dump();
  out += '\n';
  out += payload;
  return out;
}

inline ModelArtifact deserialize_artifact(std::string_view bytes) {
  using namespace artifact_detail;
  const std::size_t magic_end = bytes.find('\n');
  if (magic_end == std::string_view::npos || bytes.substr(0, magic_end) != kMagic) {
    throw ArtifactError("artifact: bad magic line, not a model artifact");
  }
  const std::size_t header_end = bytes.find('\n', magic_end + 1);
  if (header_end == std::string_view::npos) throw ArtifactError("artifact: checksum failure, file truncated inside header");
  nlohmann::ordered_json h;
  try {
    h = nlohmann::ordered_json::parse(bytes.substr(magic_end + 1, header_end - magic_end - 1));
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("artifact: unreadable header: ") + e.what());
  }
  try {
    const int version = h.at("format_version").get<int>();
    if (version != ModelArtifact::kFormatVersion) {
      throw ArtifactError("artifact: format version " + std::to_string(version) + " not supported (expected " +
                          std::to_string(ModelArtifact::kFormatVersion) + ")");
    }
    const std::string_view payload = bytes.substr(header_end + 1);
    const auto expected_bytes = h.at("payload_bytes").get<std::size_t>();
    if (payload.size() != expected_bytes) {
      throw ArtifactError("artifact: checksum failure, payload has " + std::to_string(payload.size()) +
                          " bytes, header declares " + std::to_string(expected_bytes));
    }
    const std::string checksum = "fnv1a64:" + hex64(fnv1a64(payload));
    if (checksum != h.at("payload_checksum").get<std::string>()) {
      throw ArtifactError("artifact: checksum failure, payload does not match header checksum");
    }

    ModelArtifact a;
    a.format_version = version;
    a.seed = h.at("seed").get<std::uint64_t>();
    a.config_fingerprint = std::stoull(h.at("config_fingerprint").get<std::string>(), nullptr, 16);
    a.config = h.at("config");
    a.class_count = h.at("class_count").get<std::size_t>();
    a.knn_k = h.at("knn_k").get<std::size_t>();
    a.plan.source_channels = h.at("channels").get<std::size_t>();
    a.plan.seed = h.at("plan").at("seed").get<std::uint64_t>();
    a.plan.permutation = h.at("plan").at("permutation").get<std::vector<std::size_t>>();
    a.zone = {h.at("zone").at("start").get<int>(), h.at("zone").at("end").get<int>()};

    const auto& m = h.at("mapper");
    const auto len = m.at("zone_length").get<std::size_t>();
    const auto depth = m.at("conv_depth").get<std::size_t>();
    const auto units = m.at("fc_units").get<std::size_t>();
    a.mapper.conv = {Tensor2(depth, kConvWidth), std::vector<double>(depth), m.at("conv_bias").get<bool>()};
    a.mapper.fc = {Tensor2(units, len * depth), std::vector<double>(units), Activation::ReLU};
    a.mapper.out = {Tensor2(a.class_count, units), std::vector<double>(a.class_count), Activation::Identity};
    const auto rows = h.at("bank").at("rows").get<std::size_t>();
    const auto cols = h.at("bank").at("cols").get<std::size_t>();
    a.bank.features = Tensor2(rows, cols);
    a.bank.labels.assign(rows, 0);
    a.bank.source = std::stoull(h.at("bank").at("source").get<std::string>(), nullptr, 16);
    if (h.at("scaling").get<bool>()) {
      a.scaling.minimum.assign(a.plan.source_channels, 0.0);
      a.scaling.maximum.assign(a.plan.source_channels, 0.0);
    }

    const auto declared = h.at("blocks");
    const auto expected = blocks_for(a);
    if (declared.size() != expected.size()) throw ArtifactError("artifact: block list does not match shapes");
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (declared[i].at("name").get<std::string>() != expected[i].name ||
          declared[i].at("dtype").get<std::string>() != expected[i].dtype ||
          declared[i].at("count").get<std::size_t>() != expected[i].count) {
        throw ArtifactError("artifact: block '" + expected[i].name + "' does not match declared shapes");
      }
    }

    Reader r(payload);
    r.f64(a.mapper.conv.filters.values);
    r.f64(a.mapper.conv.biases);
    r.f64(a.mapper.fc.weights.values);
    r.f64(a.mapper.fc.biases);
    r.f64(a.mapper.out.weights.values);
    r.f64(a.mapper.out.biases);
    r.f64(a.bank.features.values);
    r.i32(a.bank.labels);
    if (!a.scaling.empty()) {
      r.f64(a.scaling.minimum);
      r.f64(a.scaling.maximum);
    }
    if (!r.done()) throw ArtifactError("artifact: trailing bytes after last block");
    if (a.plan.permutation.empty() || !is_valid(a.zone, static_cast<int>(a.plan.target_length()), 1) ||
        static_cast<std::size_t>(a.zone.width()) != len) {
      throw ArtifactError("artifact: zone inconsistent with shuffle plan or mapper");
    }
    for (std::size_t src : a.plan.permutation) {
      if (src >= a.plan.source_channels) throw ArtifactError("artifact: shuffle plan index out of range");
    }
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("artifact: malformed header: ") + e.what());
  }
}

inline void save_artifact(const ModelArtifact& a, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError(path + ": cannot open for writing");
  const std::string bytes = serialize_artifact(a);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArtifactError(path + ": write failed");
}

inline ModelArtifact load_artifact(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError(path + ": cannot open artifact");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_artifact(buf.str());
}

}  // namespace attnzone
