#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnzone/numerics.hpp"
#include "attnzone/rng.hpp"

namespace attnzone {

struct MapperHyper {
  double learning_rate = 0.001;
  double l2_lambda = 0.001;
  std::size_t iterations = 2000;
  // Mini-batch size; sets no larger than this train full-batch.
  std::size_t batch_size = 128;
  std::size_t conv_depth = 10;
  std::size_t fc_units = 100;
  bool conv_bias = true;
  std::uint64_t seed = 0;
};

// conv (length-2 kernels) -> flatten -> dense ReLU -> dense logits.
// The conv output is flattened position-major: all depth values of
// position 0, then position 1, ...
struct MapperNet {
  Conv1DLayer conv;
  DenseLayer fc;
  DenseLayer out;

  static MapperNet make(std::size_t zone_length, std::size_t classes, const MapperHyper& hyper, Rng& rng) {
    if (zone_length < kConvWidth) {
      throw std::invalid_argument("MapperNet: zone length " + std::to_string(zone_length) +
                                  " narrower than conv kernel width 2");
    }
    if (classes < 2) throw std::invalid_argument("MapperNet: need at least 2 classes");
    MapperNet net;
    net.conv = make_conv1d(hyper.conv_depth, rng, hyper.conv_bias);
    net.fc = make_dense(zone_length * hyper.conv_depth, hyper.fc_units, Activation::ReLU, rng);
    net.out = make_dense(hyper.fc_units, classes, Activation::Identity, rng);
    return net;
  }

  std::size_t zone_length() const { return fc.in_size() / conv.depth(); }
  std::size_t class_count() const { return out.out_size(); }
  std::size_t feature_size() const { return fc.out_size(); }
  std::size_t param_count() const { return conv.param_count() + fc.param_count() + out.param_count(); }

  std::vector<double> flatten() const {
    std::vector<double> flat;
    flat.reserve(param_count());
    append_params(flat, conv.filters, conv.biases);
    append_params(flat, fc.weights, fc.biases);
    append_params(flat, out.weights, out.biases);
    return flat;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != param_count()) throw std::invalid_argument("MapperNet::assign: wrong parameter count");
    std::size_t at = read_params(flat, 0, conv.filters, conv.biases);
    at = read_params(flat, at, fc.weights, fc.biases);
    read_params(flat, at, out.weights, out.biases);
  }

  std::uint64_t fingerprint() const {
    const auto flat = flatten();
    return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(flat.data()), flat.size() * sizeof(double)));
  }

  friend bool operator==(const MapperNet&, const MapperNet&) = default;
};

namespace detail {

inline void conv_forward_batch(const MapperNet& net, const Tensor2& zones, RowMatrix& conv_out) {
  const std::size_t len = zones.cols;
  const std::size_t depth = net.conv.depth();
  conv_out.resize(static_cast<Eigen::Index>(zones.rows), static_cast<Eigen::Index>(len * depth));
  const auto& f = net.conv.filters;
  for (std::size_t b = 0; b < zones.rows; ++b) {
    const auto x = zones.row(b);
    double* dst = conv_out.row(static_cast<Eigen::Index>(b)).data();
    for (std::size_t p = 0; p < len; ++p) {
      const double x0 = x[p];
      const double x1 = p + 1 < len ? x[p + 1] : 0.0;
      for (std::size_t j = 0; j < depth; ++j) {
        const double bias = net.conv.use_bias ? net.conv.biases[j] : 0.0;
        dst[p * depth + j] = std::max(0.0, bias + f(j, 0) * x0 + f(j, 1) * x1);
      }
    }
  }
}

// Eigen picks vectorised or scalar code per element from the runtime address,
// so products only ever touch Eigen-owned (aligned) storage.
inline RowMatrix owned(const Tensor2& t) { return t.matrix(); }
inline Eigen::RowVectorXd owned_row(std::span<const double> v) { return vector_map(v).transpose(); }

inline void store(const RowMatrix& m, double* dst) { std::copy(m.data(), m.data() + m.size(), dst); }

inline void check_zone_batch(const MapperNet& net, const Tensor2& zones) {
  if (zones.cols != net.zone_length()) {
    throw std::invalid_argument("mapper: zone length " + std::to_string(zones.cols) + " does not match trained length " +
                                std::to_string(net.zone_length()));
  }
}

}  // namespace detail

// FC-layer activations (post-ReLU) for a batch of zones, one row each.
inline Tensor2 extract_features(const MapperNet& net, const Tensor2& zones) {
  detail::check_zone_batch(net, zones);
  RowMatrix conv_out;
  detail::conv_forward_batch(net, zones, conv_out);
  RowMatrix h = conv_out * detail::owned(net.fc.weights).transpose();
  h.rowwise() += detail::owned_row(net.fc.biases);
  h = h.cwiseMax(0.0);
  Tensor2 features(zones.rows, net.feature_size());
  detail::store(h, features.values.data());
  return features;
}

// Single-zone path built from the layer primitives.
inline std::vector<double> extract_features(const MapperNet& net, std::span<const double> zone) {
  if (zone.size() != net.zone_length()) {
    throw std::invalid_argument("extract_features: zone length " + std::to_string(zone.size()) +
                                " does not match trained length " + std::to_string(net.zone_length()));
  }
  const Tensor2 conv_out = conv1d_forward(zone, net.conv);
  return dense_forward(conv_out.values, net.fc);
}

inline Tensor2 mapper_logits(const MapperNet& net, const Tensor2& zones) {
  const Tensor2 features = extract_features(net, zones);
  RowMatrix z = detail::owned(features) * detail::owned(net.out.weights).transpose();
  z.rowwise() += detail::owned_row(net.out.biases);
  Tensor2 logits(zones.rows, net.class_count());
  detail::store(z, logits.values.data());
  return logits;
}

inline std::vector<int> mapper_predict(const MapperNet& net, const Tensor2& zones) {
  const Tensor2 logits = mapper_logits(net, zones);
  std::vector<int> out(zones.rows);
  for (std::size_t i = 0; i < zones.rows; ++i) {
    const auto r = logits.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

// Mean cross-entropy over the batch plus lambda * sum of squared weights
// (conv filters, fc and output weights; biases are not penalised). When
// `grad` is non-null it receives the gradient in MapperNet::flatten() order.
inline double mapper_loss(const MapperNet& net, const Tensor2& zones, std::span<const int> labels, double l2_lambda,
                          std::vector<double>* grad = nullptr) {
  detail::check_zone_batch(net, zones);
  if (labels.size() != zones.rows || zones.rows == 0) throw std::invalid_argument("mapper_loss: label count mismatch");
  const std::size_t batch = zones.rows;
  const std::size_t classes = net.class_count();
  const std::size_t len = zones.cols;
  const std::size_t depth = net.conv.depth();

  RowMatrix conv_out;
  detail::conv_forward_batch(net, zones, conv_out);
  const RowMatrix wf = detail::owned(net.fc.weights);
  const RowMatrix wo = detail::owned(net.out.weights);
  RowMatrix hidden = conv_out * wf.transpose();
  hidden.rowwise() += detail::owned_row(net.fc.biases);
  hidden = hidden.cwiseMax(0.0);
  RowMatrix logits = hidden * wo.transpose();
  logits.rowwise() += detail::owned_row(net.out.biases);

  double loss = 0.0;
  RowMatrix g_logits(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(classes));
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto bi = static_cast<Eigen::Index>(b);
    const auto y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw std::invalid_argument("mapper_loss: label out of range");
    const double peak = logits.row(bi).maxCoeff();
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(logits(bi, static_cast<Eigen::Index>(c)) - peak);
    const double log_norm = peak + std::log(total);
    loss += log_norm - logits(bi, y);
    for (std::size_t c = 0; c < classes; ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      const double p = std::exp(logits(bi, ci) - log_norm);
      g_logits(bi, ci) = (p - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0)) * inv_batch;
    }
  }
  loss *= inv_batch;
  loss += l2_lambda * (squared_norm(net.conv.filters.values) + squared_norm(net.fc.weights.values) +
                       squared_norm(net.out.weights.values));
  if (grad == nullptr) return loss;

  grad->assign(net.param_count(), 0.0);
  double* g = grad->data();
  const std::size_t conv_w = net.conv.filters.values.size();
  const std::size_t conv_n = net.conv.param_count();
  const std::size_t fc_w = net.fc.weights.values.size();
  const std::size_t fc_n = net.fc.param_count();
  const std::size_t out_w = net.out.weights.values.size();
  double* g_conv_f = g;
  double* g_conv_b = g + conv_w;
  double* g_fc_w = g + conv_n;
  double* g_fc_b = g_fc_w + fc_w;
  double* g_out_w = g + conv_n + fc_n;
  double* g_out_b = g_out_w + out_w;

  detail::store(g_logits.transpose() * hidden, g_out_w);
  detail::store(g_logits.colwise().sum(), g_out_b);

  RowMatrix g_hidden = g_logits * wo;
  g_hidden = g_hidden.cwiseProduct((hidden.array() > 0.0).cast<double>().matrix());
  detail::store(g_hidden.transpose() * conv_out, g_fc_w);
  detail::store(g_hidden.colwise().sum(), g_fc_b);

  RowMatrix g_conv = g_hidden * wf;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto x = zones.row(b);
    const double* act = conv_out.row(static_cast<Eigen::Index>(b)).data();
    const double* gc = g_conv.row(static_cast<Eigen::Index>(b)).data();
    for (std::size_t p = 0; p < len; ++p) {
      const double x0 = x[p];
      const double x1 = p + 1 < len ? x[p + 1] : 0.0;
      for (std::size_t j = 0; j < depth; ++j) {
        if (act[p * depth + j] <= 0.0) continue;
        const double gv = gc[p * depth + j];
        g_conv_f[j * kConvWidth] += gv * x0;
        g_conv_f[j * kConvWidth + 1] += gv * x1;
        if (net.conv.use_bias) g_conv_b[j] += gv;
      }
    }
  }

  const double two_lambda = 2.0 * l2_lambda;
  for (std::size_t i = 0; i < conv_w; ++i) g_conv_f[i] += two_lambda * net.conv.filters.values[i];
  for (std::size_t i = 0; i < fc_w; ++i) g_fc_w[i] += two_lambda * net.fc.weights.values[i];
  for (std::size_t i = 0; i < out_w; ++i) g_out_w[i] += two_lambda * net.out.weights.values[i];
  return loss;
}

struct TrainedMapper {
  MapperNet net;
  std::vector<double> loss_trace;
};

// Adam on cross-entropy + L2. Mini-batches walk a shuffled row order that
// is reshuffled each epoch; deterministic per hyper.seed.
inline TrainedMapper train_mapper(const Tensor2& zones, std::span<const int> labels, std::size_t classes,
                                  const MapperHyper& hyper) {
  if (zones.cols < kConvWidth) {
    throw std::invalid_argument("train_mapper: zone length " + std::to_string(zones.cols) + " < 2");
  }
  if (zones.rows == 0 || labels.size() != zones.rows) throw std::invalid_argument("train_mapper: label count mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::invalid_argument("train_mapper: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(classes) + ")");
    }
  }
  Rng rng(hyper.seed);
  TrainedMapper result{MapperNet::make(zones.cols, classes, hyper, rng), {}};
  if (hyper.iterations == 0) return result;

  const std::size_t n = zones.rows;
  const bool full_batch = hyper.batch_size == 0 || n <= hyper.batch_size;
  const std::size_t batch = full_batch ? n : hyper.batch_size;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!full_batch) rng.shuffle(std::span(order));
  std::size_t cursor = 0;

  Tensor2 batch_zones(batch, zones.cols);
  std::vector<int> batch_labels(batch);
  std::vector<double> grad;
  std::vector<double> params = result.net.flatten();
  AdamState adam(params.size(), hyper.learning_rate);
  result.loss_trace.reserve(hyper.iterations);

  for (std::size_t it = 0; it < hyper.iterations; ++it) {
    double loss = 0.0;
    if (full_batch) {
      loss = mapper_loss(result.net, zones, labels, hyper.l2_lambda, &grad);
    } else {
      for (std::size_t k = 0; k < batch; ++k) {
        if (cursor == n) {
          rng.shuffle(std::span(order));
          cursor = 0;
        }
        const std::size_t r = order[cursor++];
        std::copy_n(zones.row(r).begin(), zones.cols, batch_zones.row(k).begin());
        batch_labels[k] = labels[r];
      }
      loss = mapper_loss(result.net, batch_zones, batch_labels, hyper.l2_lambda, &grad);
    }
    if (!std::isfinite(loss)) {
      throw std::runtime_error("train_mapper: non-finite loss at iteration " + std::to_string(it) +
                               " (learning rate " + std::to_string(hyper.learning_rate) + ")");
    }
    result.loss_trace.push_back(loss);
    adam_step(params, grad, adam);
    result.net.assign(params);
  }
  return result;
}

// Reference features for the nearest-neighbour classifier.
struct FeatureBank {
  Tensor2 features;
  std::vector<int> labels;
  std::uint64_t source = 0;  // fingerprint of the mapper weights

  std::size_t size() const { return labels.size(); }

  friend bool operator==(const FeatureBank&, const FeatureBank&) = default;
};

inline FeatureBank build_feature_bank(const MapperNet& net, const Tensor2& zones, std::span<const int> labels) {
  if (labels.size() != zones.rows) throw std::invalid_argument("build_feature_bank: label count mismatch");
  return {extract_features(net, zones), std::vector<int>(labels.begin(), labels.end()), net.fingerprint()};
}

// Euclidean k-NN. Neighbours are ordered by (distance, row index); the
// vote is won by the most frequent label, ties going to the label whose
// closest member comes first. k = 1 is the plain nearest row.
inline int knn_predict(const FeatureBank& bank, std::span<const double> query, std::size_t k = 1) {
  if (bank.size() == 0) throw std::invalid_argument("knn_predict: empty feature bank");
  if (query.size() != bank.features.cols) {
    throw std::invalid_argument("knn_predict: query has " + std::to_string(query.size()) + " features, bank has " +
                                std::to_string(bank.features.cols));
  }
  if (k == 0) throw std::invalid_argument("knn_predict: k must be >= 1");
  const std::size_t n = bank.size();
  const std::size_t dim = query.size();
  auto distance = [&](std::size_t r) {
    const double* row = bank.features.values.data() + r * dim;
    double d = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      const double diff = row[c] - query[c];
      d += diff * diff;
    }
    return d;
  };
  if (k == 1) {
    std::size_t best = 0;
    double best_d = distance(0);
    for (std::size_t r = 1; r < n; ++r) {
      const double d = distance(r);
      if (d < best_d) {
        best_d = d;
        best = r;
      }
    }
    return bank.labels[best];
  }
  std::vector<std::pair<double, std::size_t>> ranked(n);
  for (std::size_t r = 0; r < n; ++r) ranked[r] = {distance(r), r};
  const std::size_t kk = std::min(k, n);
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(kk), ranked.end());
  std::vector<std::pair<int, std::size_t>> votes;  // label, count (in first-seen order)
  for (std::size_t i = 0; i < kk; ++i) {
    const int y = bank.labels[ranked[i].second];
    auto it = std::find_if(votes.begin(), votes.end(), [y](const auto& v) { return v.first == y; });
    if (it == votes.end()) {
      votes.emplace_back(y, 1);
    } else {
      ++it->second;
    }
  }
  auto best = votes.begin();
  for (auto it = votes.begin(); it != votes.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

inline std::vector<int> knn_predict(const FeatureBank& bank, const Tensor2& queries, std::size_t k = 1) {
  std::vector<int> out(queries.rows);
  for (std::size_t i = 0; i < queries.rows; ++i) out[i] = knn_predict(bank, queries.row(i), k);
  return out;
}

}  // namespace attnzone
