#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "attnzone/rng.hpp"

namespace attnzone {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

// Dense row-major matrix of doubles.
struct Tensor2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Tensor2() = default;
  Tensor2(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  Tensor2(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != rows * cols) {
      throw std::invalid_argument("Tensor2: value count " + std::to_string(values.size()) +
                                  " does not match " + std::to_string(rows) + "x" +
                                  std::to_string(cols));
    }
  }

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

  MatrixMap matrix() { return {values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)}; }
  ConstMatrixMap matrix() const {
    return {values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
  }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor2&, const Tensor2&) = default;
};

inline ConstVectorMap vector_map(std::span<const double> v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}
inline VectorMap vector_map(std::span<double> v) { return {v.data(), static_cast<Eigen::Index>(v.size())}; }

enum class Activation { ReLU, Identity };

inline double activate(Activation a, double z) { return a == Activation::ReLU ? std::max(z, 0.0) : z; }

struct DenseLayer {
  Tensor2 weights;  // out x in
  std::vector<double> biases;
  Activation activation = Activation::Identity;

  std::size_t in_size() const { return weights.cols; }
  std::size_t out_size() const { return weights.rows; }
  std::size_t param_count() const { return weights.values.size() + biases.size(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

inline constexpr std::size_t kConvWidth = 2;

// Length-2 kernels, stride 1, one trailing zero pad so that output length
// equals input length.
struct Conv1DLayer {
  Tensor2 filters;  // depth x kConvWidth
  std::vector<double> biases;
  bool use_bias = true;

  std::size_t depth() const { return filters.rows; }
  std::size_t param_count() const { return filters.values.size() + biases.size(); }

  friend bool operator==(const Conv1DLayer&, const Conv1DLayer&) = default;
};

struct DenseGrad {
  Tensor2 weights;
  std::vector<double> biases;

  explicit DenseGrad(const DenseLayer& layer)
      : weights(layer.weights.rows, layer.weights.cols), biases(layer.biases.size(), 0.0) {}
};

struct ConvGrad {
  Tensor2 filters;
  std::vector<double> biases;

  explicit ConvGrad(const Conv1DLayer& layer)
      : filters(layer.filters.rows, layer.filters.cols), biases(layer.biases.size(), 0.0) {}
};

// Glorot-uniform weights, zero biases.
inline void glorot_fill(std::span<double> w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& x : w) x = rng.uniform(-limit, limit);
}

inline DenseLayer make_dense(std::size_t in, std::size_t out, Activation act, Rng& rng) {
  if (in == 0 || out == 0) throw std::invalid_argument("make_dense: sizes must be positive");
  DenseLayer layer{Tensor2(out, in), std::vector<double>(out, 0.0), act};
  glorot_fill(layer.weights.values, in, out, rng);
  return layer;
}

inline Conv1DLayer make_conv1d(std::size_t depth, Rng& rng, bool use_bias = true) {
  if (depth == 0) throw std::invalid_argument("make_conv1d: depth must be >= 1");
  Conv1DLayer layer{Tensor2(depth, kConvWidth), std::vector<double>(depth, 0.0), use_bias};
  glorot_fill(layer.filters.values, kConvWidth, kConvWidth * depth, rng);
  return layer;
}

inline std::vector<double> dense_forward(std::span<const double> x, const DenseLayer& layer) {
  if (x.size() != layer.in_size()) {
    throw std::invalid_argument("dense_forward: input length " + std::to_string(x.size()) +
                                " != layer in-size " + std::to_string(layer.in_size()));
  }
  if (layer.biases.size() != layer.out_size()) {
    throw std::invalid_argument("dense_forward: bias length does not match out-size");
  }
  std::vector<double> y(layer.out_size());
  for (std::size_t o = 0; o < y.size(); ++o) {
    double z = layer.biases[o];
    const auto w = layer.weights.row(o);
    for (std::size_t i = 0; i < x.size(); ++i) z += w[i] * x[i];
    y[o] = activate(layer.activation, z);
  }
  return y;
}

// Accumulates dL/dW and dL/db into `grad`, returns dL/dx. `y` is the
// post-activation output of dense_forward for the same `x`.
inline std::vector<double> dense_backward(std::span<const double> x, const DenseLayer& layer,
                                          std::span<const double> y, std::span<const double> grad_y,
                                          DenseGrad& grad) {
  if (x.size() != layer.in_size() || y.size() != layer.out_size() || grad_y.size() != y.size()) {
    throw std::invalid_argument("dense_backward: shape mismatch");
  }
  std::vector<double> grad_x(x.size(), 0.0);
  for (std::size_t o = 0; o < y.size(); ++o) {
    double gz = grad_y[o];
    if (layer.activation == Activation::ReLU && y[o] <= 0.0) gz = 0.0;
    if (gz == 0.0) continue;
    grad.biases[o] += gz;
    const auto w = layer.weights.row(o);
    auto gw = grad.weights.row(o);
    for (std::size_t i = 0; i < x.size(); ++i) {
      gw[i] += gz * x[i];
      grad_x[i] += gz * w[i];
    }
  }
  return grad_x;
}

// Output is L x depth; column j is ReLU(b_j + w_j0 * x[p] + w_j1 * x[p+1])
// with x[L] = 0.
inline Tensor2 conv1d_forward(std::span<const double> x, const Conv1DLayer& layer) {
  const std::size_t len = x.size();
  if (len < kConvWidth) {
    throw std::invalid_argument("conv1d_forward: input length " + std::to_string(len) +
                                " shorter than kernel width 2");
  }
  const std::size_t depth = layer.depth();
  Tensor2 out(len, depth);
  for (std::size_t p = 0; p < len; ++p) {
    const double x0 = x[p];
    const double x1 = p + 1 < len ? x[p + 1] : 0.0;
    for (std::size_t j = 0; j < depth; ++j) {
      const double b = layer.use_bias ? layer.biases[j] : 0.0;
      out(p, j) = std::max(0.0, b + layer.filters(j, 0) * x0 + layer.filters(j, 1) * x1);
    }
  }
  return out;
}

inline std::vector<double> conv1d_backward(std::span<const double> x, const Conv1DLayer& layer,
                                           const Tensor2& out, const Tensor2& grad_out, ConvGrad& grad) {
  const std::size_t len = x.size();
  const std::size_t depth = layer.depth();
  if (out.rows != len || out.cols != depth || grad_out.rows != len || grad_out.cols != depth) {
    throw std::invalid_argument("conv1d_backward: shape mismatch");
  }
  std::vector<double> grad_x(len, 0.0);
  for (std::size_t p = 0; p < len; ++p) {
    const double x0 = x[p];
    const double x1 = p + 1 < len ? x[p + 1] : 0.0;
    for (std::size_t j = 0; j < depth; ++j) {
      if (out(p, j) <= 0.0) continue;
      const double g = grad_out(p, j);
      grad.filters(j, 0) += g * x0;
      grad.filters(j, 1) += g * x1;
      if (layer.use_bias) grad.biases[j] += g;
      grad_x[p] += g * layer.filters(j, 0);
      if (p + 1 < len) grad_x[p + 1] += g * layer.filters(j, 1);
    }
  }
  return grad_x;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - peak);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

struct SoftmaxLoss {
  double loss = 0.0;
  std::vector<double> probs;
};

inline SoftmaxLoss softmax_cross_entropy(std::span<const double> logits, std::span<const double> onehot) {
  if (logits.empty() || logits.size() != onehot.size()) {
    throw std::invalid_argument("softmax_cross_entropy: logits and one-hot lengths differ");
  }
  std::size_t hot = onehot.size();
  for (std::size_t i = 0; i < onehot.size(); ++i) {
    if (onehot[i] == 1.0) {
      if (hot != onehot.size()) throw std::invalid_argument("softmax_cross_entropy: more than one hot entry");
      hot = i;
    } else if (onehot[i] != 0.0) {
      throw std::invalid_argument("softmax_cross_entropy: one-hot entries must be 0 or 1");
    }
  }
  if (hot == onehot.size()) throw std::invalid_argument("softmax_cross_entropy: one-hot vector has no 1");

  // log-sum-exp keeps saturated logits finite
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - peak);
  const double log_norm = peak + std::log(total);
  SoftmaxLoss out;
  out.loss = log_norm - logits[hot];
  out.probs.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out.probs[i] = std::exp(logits[i] - log_norm);
  return out;
}

inline double squared_norm(std::span<const double> w) {
  double s = 0.0;
  for (double x : w) s += x * x;
  return s;
}

// Adam with bias correction over one flat parameter vector.
struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t step = 0;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(std::size_t param_count, double lr)
      : first_moment(param_count, 0.0), second_moment(param_count, 0.0), learning_rate(lr) {}
};

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and moment sizes differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    params[i] -= state.learning_rate * (m / c1) / (std::sqrt(v / c2) + state.epsilon);
  }
}

// Flat parameter layout used by the optimizers and the gradient checker:
// weights row-major, then biases, layer by layer.
inline void append_params(std::vector<double>& flat, const Tensor2& w, std::span<const double> b) {
  flat.insert(flat.end(), w.values.begin(), w.values.end());
  flat.insert(flat.end(), b.begin(), b.end());
}

inline std::size_t read_params(std::span<const double> flat, std::size_t offset, Tensor2& w,
                               std::vector<double>& b) {
  if (offset + w.values.size() + b.size() > flat.size()) {
    throw std::invalid_argument("read_params: flat parameter vector too short");
  }
  std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), w.values.size(), w.values.begin());
  offset += w.values.size();
  std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), b.size(), b.begin());
  return offset + b.size();
}

using LossFn = std::function<double(std::span<const double>)>;

// Central-difference gradient check. Returns
// max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
inline double finite_difference_check(const LossFn& loss, std::span<const double> params,
                                      std::span<const double> analytic, double h = 1e-5) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference_check: step must be positive");
  if (params.size() != analytic.size()) {
    throw std::invalid_argument("finite_difference_check: gradient length differs from parameters");
  }
  std::vector<double> probe(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + h;
    const double up = loss(probe);
    probe[i] = original - h;
    const double down = loss(probe);
    probe[i] = original;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error("finite_difference_check: non-finite loss at parameter " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace attnzone
