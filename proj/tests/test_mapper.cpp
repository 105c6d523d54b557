#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "attnzone/mapper.hpp"

namespace az = attnzone;

namespace {

az::MapperHyper small_hyper(std::uint64_t seed = 1) {
  az::MapperHyper h;
  h.conv_depth = 4;
  h.fc_units = 12;
  h.seed = seed;
  return h;
}

struct Toy {
  az::Tensor2 zones;
  std::vector<int> labels;
};

// Two classes separated by the sign of the mean.
Toy separable(std::size_t n, std::size_t len, std::uint64_t seed) {
  az::Rng rng(seed);
  Toy t{az::Tensor2(n, len), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    t.labels[i] = static_cast<int>(i % 2);
    const double shift = t.labels[i] == 0 ? -1.5 : 1.5;
    for (std::size_t j = 0; j < len; ++j) t.zones(i, j) = shift + 0.5 * rng.normal();
  }
  return t;
}

double train_accuracy(const az::MapperNet& net, const Toy& t) {
  const auto pred = az::mapper_predict(net, t.zones);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == t.labels[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

}  // namespace

TEST(MapperNet, Shapes) {
  az::Rng rng(1);
  az::MapperHyper h;
  const auto net = az::MapperNet::make(16, 3, h, rng);
  EXPECT_EQ(net.zone_length(), 16u);
  EXPECT_EQ(net.class_count(), 3u);
  EXPECT_EQ(net.feature_size(), 100u);
  EXPECT_EQ(net.flatten().size(), net.param_count());
  EXPECT_THROW(az::MapperNet::make(1, 3, h, rng), std::invalid_argument);
}

TEST(MapperNet, FlattenAssignRoundTrip) {
  az::Rng rng(2);
  const auto net = az::MapperNet::make(8, 2, small_hyper(), rng);
  az::Rng rng2(3);
  auto other = az::MapperNet::make(8, 2, small_hyper(), rng2);
  other.assign(net.flatten());
  EXPECT_EQ(other, net);
  EXPECT_EQ(other.fingerprint(), net.fingerprint());
}

TEST(MapperNet, BatchedFeaturesMatchSingleSample) {
  az::Rng rng(4);
  const auto net = az::MapperNet::make(10, 3, small_hyper(), rng);
  az::Tensor2 zones(7, 10);
  for (double& v : zones.values) v = rng.normal();
  const auto batch = az::extract_features(net, zones);
  for (std::size_t i = 0; i < zones.rows; ++i) {
    const auto single = az::extract_features(net, zones.row(i));
    for (std::size_t k = 0; k < single.size(); ++k) EXPECT_NEAR(batch(i, k), single[k], 1e-12);
  }
}

TEST(MapperNet, FeaturesNonNegativeAndDeterministic) {
  az::Rng rng(5);
  const auto net = az::MapperNet::make(10, 3, small_hyper(), rng);
  std::vector<double> zone(10);
  for (double& v : zone) v = rng.normal();
  const auto a = az::extract_features(net, zone);
  EXPECT_EQ(a, az::extract_features(net, zone));
  for (double v : a) EXPECT_GE(v, 0.0);
  const std::vector<double> wrong(9, 0.0);
  EXPECT_THROW(az::extract_features(net, wrong), std::invalid_argument);
}

TEST(MapperNet, ZeroZoneZeroBiasGivesZeroFeatures) {
  az::Rng rng(6);
  auto net = az::MapperNet::make(6, 2, small_hyper(), rng);
  std::fill(net.conv.biases.begin(), net.conv.biases.end(), 0.0);
  std::fill(net.fc.biases.begin(), net.fc.biases.end(), 0.0);
  const std::vector<double> zero(6, 0.0);
  for (double v : az::extract_features(net, zero)) EXPECT_EQ(v, 0.0);
}

TEST(MapperLoss, GradientMatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    az::Rng rng(seed);
    az::MapperHyper h = small_hyper(seed);
    auto net = az::MapperNet::make(16, 3, h, rng);
    for (double& b : net.conv.biases) b = 0.1;
    for (double& b : net.fc.biases) b = 0.1;
    az::Tensor2 zones(5, 16);
    for (double& v : zones.values) v = rng.normal();
    const std::vector<int> labels{0, 1, 2, 1, 0};
    std::vector<double> grad;
    az::mapper_loss(net, zones, labels, 0.001, &grad);
    const auto params = net.flatten();
    auto loss = [&](std::span<const double> p) {
      az::MapperNet probe = net;
      probe.assign(p);
      return az::mapper_loss(probe, zones, labels, 0.001);
    };
    EXPECT_LT(az::finite_difference_check(loss, params, grad), 1e-4) << "seed " << seed;
  }
}

TEST(MapperLoss, GradientCheckAfterTraining) {
  const auto toy = separable(40, 16, 3);
  auto h = small_hyper(3);
  h.iterations = 100;
  const auto trained = az::train_mapper(toy.zones, toy.labels, 2, h);
  std::vector<double> grad;
  az::mapper_loss(trained.net, toy.zones, toy.labels, 0.001, &grad);
  auto loss = [&](std::span<const double> p) {
    az::MapperNet probe = trained.net;
    probe.assign(p);
    return az::mapper_loss(probe, toy.zones, toy.labels, 0.001);
  };
  EXPECT_LT(az::finite_difference_check(loss, trained.net.flatten(), grad), 1e-4);
}

TEST(MapperLoss, BiasesAreNotPenalised) {
  az::Rng rng(8);
  auto net = az::MapperNet::make(4, 2, small_hyper(), rng);
  az::Tensor2 zones(2, 4, 0.5);
  const std::vector<int> labels{0, 1};
  const double base = az::mapper_loss(net, zones, labels, 1.0);
  const double plain = az::mapper_loss(net, zones, labels, 0.0);
  const double l2 = az::squared_norm(net.conv.filters.values) + az::squared_norm(net.fc.weights.values) +
                    az::squared_norm(net.out.weights.values);
  EXPECT_NEAR(base - plain, l2, 1e-12);
}

TEST(TrainMapper, SeparableToyReachesPerfectAccuracy) {
  const auto toy = separable(40, 16, 1);
  az::MapperHyper h;
  h.seed = 1;
  const auto trained = az::train_mapper(toy.zones, toy.labels, 2, h);
  EXPECT_EQ(trained.loss_trace.size(), 2000u);
  EXPECT_EQ(train_accuracy(trained.net, toy), 1.0);
  EXPECT_LT(trained.loss_trace.back(), trained.loss_trace.front());
}

TEST(TrainMapper, ZeroIterationsReturnsInitialNet) {
  const auto toy = separable(10, 8, 2);
  auto h = small_hyper(5);
  h.iterations = 0;
  const auto trained = az::train_mapper(toy.zones, toy.labels, 2, h);
  az::Rng rng(5);
  EXPECT_EQ(trained.net, az::MapperNet::make(8, 2, h, rng));
  EXPECT_TRUE(trained.loss_trace.empty());
}

TEST(TrainMapper, DeterministicPerSeed) {
  const auto toy = separable(200, 8, 4);
  auto h = small_hyper(9);
  h.iterations = 50;
  h.batch_size = 32;
  const auto a = az::train_mapper(toy.zones, toy.labels, 2, h);
  const auto b = az::train_mapper(toy.zones, toy.labels, 2, h);
  EXPECT_EQ(a.net, b.net);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
}

TEST(TrainMapper, HeavyRegularisationCollapsesToMajority) {
  auto toy = separable(30, 8, 6);
  toy.labels.assign(30, 0);
  for (std::size_t i = 0; i < 10; ++i) toy.labels[i * 3] = 1;
  auto h = small_hyper(2);
  h.l2_lambda = 1e3;
  h.iterations = 2000;
  h.learning_rate = 0.01;
  const auto trained = az::train_mapper(toy.zones, toy.labels, 2, h);
  double weights = az::squared_norm(trained.net.fc.weights.values) + az::squared_norm(trained.net.out.weights.values);
  EXPECT_LT(weights, 1e-3);
  for (int p : az::mapper_predict(trained.net, toy.zones)) EXPECT_EQ(p, 0);
}

TEST(TrainMapper, RejectsBadInput) {
  const auto toy = separable(10, 8, 2);
  std::vector<int> bad = toy.labels;
  bad[0] = 5;
  EXPECT_THROW(az::train_mapper(toy.zones, bad, 2, small_hyper()), std::invalid_argument);
  az::Tensor2 narrow(10, 1);
  EXPECT_THROW(az::train_mapper(narrow, toy.labels, 2, small_hyper()), std::invalid_argument);
}

TEST(TrainMapper, DivergenceAborts) {
  const auto toy = separable(10, 8, 2);
  auto h = small_hyper();
  h.learning_rate = 1e300;
  h.iterations = 50;
  EXPECT_THROW(az::train_mapper(toy.zones, toy.labels, 2, h), std::runtime_error);
}

TEST(Knn, ExactMatchAndNearest) {
  az::FeatureBank bank{az::Tensor2(3, 2, std::vector<double>{0, 0, 1, 0, 0, 2}), {4, 5, 6}, 0};
  const std::vector<double> q0{1, 0}, q1{0.1, 0.9}, q2{0, 1.6};
  EXPECT_EQ(az::knn_predict(bank, q0), 5);
  EXPECT_EQ(az::knn_predict(bank, q1), 4);
  EXPECT_EQ(az::knn_predict(bank, q2), 6);
}

TEST(Knn, TiesGoToLowerRow) {
  az::FeatureBank bank{az::Tensor2(2, 1, std::vector<double>{-1, 1}), {1, 0}, 0};
  const std::vector<double> q{0};
  EXPECT_EQ(az::knn_predict(bank, q), 1);
}

TEST(Knn, EmptyBankThrows) {
  az::FeatureBank bank{az::Tensor2(0, 2), {}, 0};
  const std::vector<double> q{0, 0};
  EXPECT_THROW(az::knn_predict(bank, q), std::invalid_argument);
}

TEST(Knn, MajorityVote) {
  az::FeatureBank bank{az::Tensor2(5, 1, std::vector<double>{0, 1, 2, 3, 10}), {0, 1, 1, 0, 0}, 0};
  const std::vector<double> q{1.1};
  EXPECT_EQ(az::knn_predict(bank, q, 3), 1);
}

TEST(Knn, SelfQueriesReproduceLabels) {
  az::Rng rng(3);
  const auto toy = separable(50, 8, 3);
  const auto net = az::MapperNet::make(8, 2, small_hyper(), rng);
  const auto bank = az::build_feature_bank(net, toy.zones, toy.labels);
  EXPECT_EQ(bank.source, net.fingerprint());
  const auto pred = az::knn_predict(bank, bank.features);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    // A duplicate earlier row may win the tie with a different label; none here.
    EXPECT_EQ(pred[i], toy.labels[i]);
  }
}

TEST(Knn, PermutingBankRowsKeepsPredictions) {
  az::Rng rng(11);
  az::Tensor2 feats(30, 3);
  std::vector<int> labels(30);
  for (double& v : feats.values) v = rng.normal();
  for (auto& y : labels) y = static_cast<int>(rng.index(3));
  az::FeatureBank bank{feats, labels, 0};
  std::vector<std::size_t> order(30);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span(order));
  az::FeatureBank permuted{az::Tensor2(30, 3), std::vector<int>(30), 0};
  for (std::size_t i = 0; i < 30; ++i) {
    std::copy(feats.row(order[i]).begin(), feats.row(order[i]).end(), permuted.features.row(i).begin());
    permuted.labels[i] = labels[order[i]];
  }
  for (int t = 0; t < 100; ++t) {
    std::vector<double> q{rng.normal(), rng.normal(), rng.normal()};
    EXPECT_EQ(az::knn_predict(bank, q), az::knn_predict(permuted, q));
  }
}
