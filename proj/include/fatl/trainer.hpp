#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "fatl/errors.hpp"

// From-scratch training and fine-tuning of logistic models by deterministic
// full-batch gradient descent on
//   L(W, b) = (1/N) sum_i CE(sigmoid(W.x_i + b), y_i)
//           + (gamma/2) ||W||^2 + (lambda/2) (b - b_anchor)^2
// The quadratic bias term is the training-time form of the transfer bias
// penalty: its gradient is lambda * (b - b_anchor).

namespace fatl {

struct DataMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  DataMatrix() = default;
  DataMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
};

struct TrainConfig {
  double learning_rate = 0.5;
  std::uint32_t epochs = 500;
  double l2_weight = 0.0;           // gamma, applies to weights only
  double bias_anchor_lambda = 0.0;  // lambda
  double bias_anchor_value = 0.0;   // anchor (mean of source biases at transfer time)
  std::uint64_t seed = 0;           // provenance only; full-batch descent draws nothing
  double convergence_tol = 1e-10;   // stop when |loss improvement| drops below this
};

struct TrainTrace {
  std::vector<double> losses;    // loss after each epoch's step; length epochs_run
  double initial_loss = 0.0;
  double final_grad_norm = 0.0;
  std::size_t epochs_run = 0;
};

// Argument clamp keeps exp() in range; output clamp keeps the probability
// strictly inside (0, 1) even where the exact value would round to 1.
inline double stable_sigmoid(double z) {
  z = std::clamp(z, -500.0, 500.0);
  double p;
  if (z >= 0.0) {
    const double e = std::exp(-z);
    p = 1.0 / (1.0 + e);
  } else {
    const double e = std::exp(z);
    p = e / (1.0 + e);
  }
  const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;  // largest double < 1
  return std::clamp(p, std::numeric_limits<double>::min(), hi);
}

inline double predict_proba(std::span<const double> weights, double bias,
                            std::span<const double> x) {
  if (weights.size() != x.size()) throw ConfigError("record length does not match weights");
  double z = bias;
  for (std::size_t j = 0; j < weights.size(); ++j) z += weights[j] * x[j];
  return stable_sigmoid(z);
}

// Cross entropy for logit z and label y in {0,1} without forming exp(z):
// max(z,0) - z*y + log1p(exp(-|z|)).
inline double logistic_loss_term(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad_w;
  double grad_b = 0.0;
};

inline LossGrad loss_and_gradient(const DataMatrix& data, std::span<const int> labels,
                                  std::span<const double> weights, double bias,
                                  const TrainConfig& config) {
  if (labels.size() != data.rows) throw ConfigError("label count does not match rows");
  if (weights.size() != data.cols) throw ConfigError("weight count does not match columns");
  const double n = static_cast<double>(data.rows);
  LossGrad out;
  out.grad_w.assign(data.cols, 0.0);
  for (std::size_t i = 0; i < data.rows; ++i) {
    const auto x = data.row(i);
    double z = bias;
    for (std::size_t j = 0; j < data.cols; ++j) z += weights[j] * x[j];
    const double y = static_cast<double>(labels[i]);
    out.loss += logistic_loss_term(z, y);
    const double residual = stable_sigmoid(z) - y;
    for (std::size_t j = 0; j < data.cols; ++j) out.grad_w[j] += residual * x[j];
    out.grad_b += residual;
  }
  out.loss /= n;
  out.grad_b /= n;
  for (std::size_t j = 0; j < data.cols; ++j) {
    out.grad_w[j] = out.grad_w[j] / n + config.l2_weight * weights[j];
    out.loss += 0.5 * config.l2_weight * weights[j] * weights[j];
  }
  const double bias_dev = bias - config.bias_anchor_value;
  out.loss += 0.5 * config.bias_anchor_lambda * bias_dev * bias_dev;
  out.grad_b += config.bias_anchor_lambda * bias_dev;
  return out;
}

struct TrainResult {
  std::vector<double> weights;
  double bias = 0.0;
  TrainTrace trace;
};

// Deterministic: no minibatching, fixed summation order, early stop on the
// absolute loss improvement between consecutive epochs.
inline TrainResult train_logistic(const DataMatrix& data, std::span<const int> labels,
                                  std::span<const double> init_weights, double init_bias,
                                  const TrainConfig& config) {
  if (data.rows < 2) throw TrainError("training requires at least two records");
  if (labels.size() != data.rows) throw ConfigError("label count does not match rows");
  bool has_pos = false, has_neg = false;
  for (int y : labels) {
    if (y != 0 && y != 1) throw TrainError("labels must be 0 or 1");
    (y == 1 ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg) throw TrainError("training data contains a single class");
  for (double v : data.values)
    if (!std::isfinite(v)) throw TrainError("training data contains non-finite entries");
  if (config.learning_rate < 0.0) throw ConfigError("learning rate must be non-negative");
  if (config.l2_weight < 0.0 || config.bias_anchor_lambda < 0.0)
    throw ConfigError("regularization coefficients must be non-negative");
  if (config.epochs == 0) throw ConfigError("epochs must be positive");

  TrainResult result;
  result.weights.assign(init_weights.begin(), init_weights.end());
  result.bias = init_bias;

  LossGrad lg = loss_and_gradient(data, labels, result.weights, result.bias, config);
  if (!std::isfinite(lg.loss)) throw DivergenceError(0);
  result.trace.initial_loss = lg.loss;
  double prev_loss = lg.loss;

  for (std::uint32_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t j = 0; j < result.weights.size(); ++j)
      result.weights[j] -= config.learning_rate * lg.grad_w[j];
    result.bias -= config.learning_rate * lg.grad_b;

    lg = loss_and_gradient(data, labels, result.weights, result.bias, config);
    if (!std::isfinite(lg.loss)) throw DivergenceError(epoch);
    result.trace.losses.push_back(lg.loss);
    if (std::abs(prev_loss - lg.loss) < config.convergence_tol) break;
    prev_loss = lg.loss;
  }

  double sq = lg.grad_b * lg.grad_b;
  for (double g : lg.grad_w) sq += g * g;
  result.trace.final_grad_norm = std::sqrt(sq);
  result.trace.epochs_run = result.trace.losses.size();
  return result;
}

}  // namespace fatl
