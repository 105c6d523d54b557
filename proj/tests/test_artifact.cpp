#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "attnzone/artifact.hpp"

namespace az = attnzone;

namespace {

az::ModelArtifact sample_artifact(bool with_scaling = false) {
  az::Rng rng(3);
  az::ModelArtifact a;
  a.seed = 99;
  a.config = {{"seed", 99}, {"k_prime", 12}};
  a.config_fingerprint = 0x0123456789abcdefULL;
  a.class_count = 3;
  a.knn_k = 1;
  a.plan = az::make_shuffle_plan(4, 12, 5);
  a.zone = {2, 9};
  az::MapperHyper h;
  h.conv_depth = 3;
  h.fc_units = 5;
  a.mapper = az::MapperNet::make(7, 3, h, rng);
  for (double& b : a.mapper.conv.biases) b = rng.normal();
  az::Tensor2 zones(6, 7);
  for (double& v : zones.values) v = rng.normal();
  a.bank = az::build_feature_bank(a.mapper, zones, std::vector<int>{0, 1, 2, 0, 1, 2});
  if (with_scaling) a.scaling = {{-1, -2, -3, -4}, {1, 2, 3, 4}};
  return a;
}

std::string error_of(std::string_view bytes) {
  try {
    az::deserialize_artifact(bytes);
  } catch (const az::ArtifactError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Artifact, RoundTripIsBitExact) {
  for (bool scaling : {false, true}) {
    const auto a = sample_artifact(scaling);
    const std::string bytes = az::serialize_artifact(a);
    const auto b = az::deserialize_artifact(bytes);
    EXPECT_EQ(az::serialize_artifact(b), bytes);
    EXPECT_EQ(b.mapper, a.mapper);
    EXPECT_EQ(b.bank, a.bank);
    EXPECT_EQ(b.plan, a.plan);
    EXPECT_EQ(b.zone, a.zone);
    EXPECT_EQ(b.scaling, a.scaling);
    EXPECT_EQ(b.seed, 99u);
    EXPECT_EQ(b.config_fingerprint, a.config_fingerprint);
    EXPECT_EQ(b.config, a.config);
  }
}

TEST(Artifact, SaveLoadSave) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto p1 = (dir / "attnzone_a1.art").string(), p2 = (dir / "attnzone_a2.art").string();
  az::save_artifact(sample_artifact(), p1);
  az::save_artifact(az::load_artifact(p1), p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), {}), b2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(b1, b2);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST(Artifact, EveryTruncationIsRejected) {
  const std::string bytes = az::serialize_artifact(sample_artifact());
  const std::size_t magic = std::string_view("ATTNZONE-ARTIFACT\n").size();
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    const auto msg = error_of(std::string_view(bytes).substr(0, cut));
    ASSERT_FALSE(msg.empty()) << "cut " << cut;
    if (cut > magic) {
      ASSERT_NE(msg.find("checksum"), std::string::npos) << "cut " << cut << ": " << msg;
    }
  }
}

TEST(Artifact, CorruptedPayloadFailsChecksum) {
  std::string bytes = az::serialize_artifact(sample_artifact());
  bytes[bytes.size() - 3] ^= 0x40;
  EXPECT_NE(error_of(bytes).find("checksum"), std::string::npos);
}

TEST(Artifact, VersionMismatch) {
  std::string bytes = az::serialize_artifact(sample_artifact());
  const auto pos = bytes.find("\"format_version\":1");
  ASSERT_NE(pos, std::string::npos);
  bytes.replace(pos, 18, "\"format_version\":2");
  EXPECT_NE(error_of(bytes).find("version"), std::string::npos);
}

TEST(Artifact, BadMagic) {
  EXPECT_NE(error_of("NOT-AN-ARTIFACT\n{}\n").find("magic"), std::string::npos);
}

TEST(Artifact, HeaderIsReadableJson) {
  const std::string bytes = az::serialize_artifact(sample_artifact());
  const auto first = bytes.find('\n');
  const auto second = bytes.find('\n', first + 1);
  const auto h = nlohmann::json::parse(bytes.substr(first + 1, second - first - 1));
  EXPECT_EQ(h["format_version"], 1);
  EXPECT_EQ(h["seed"], 99);
  EXPECT_EQ(h["zone"]["start"], 2);
  EXPECT_EQ(h["plan"]["permutation"].size(), 12u);
  EXPECT_EQ(h["payload_bytes"].get<std::size_t>(), bytes.size() - second - 1);
}
