#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fatl/errors.hpp"
#include "fatl/importance.hpp"
#include "fatl/model.hpp"

// Weight transfer across aligned source models: the weighted combination of
// source weights, the feature-filter mask, and the bias pull toward the
// source-bias mean. Summation order is fixed (source index ascending) so
// results are bit-reproducible.

namespace fatl {

enum class AlphaPolicy { uniform, cohort_size, performance, explicit_list };

inline AlphaPolicy alpha_policy_from_string(std::string_view s, const std::string& path) {
  if (s == "uniform") return AlphaPolicy::uniform;
  if (s == "cohort_size") return AlphaPolicy::cohort_size;
  if (s == "performance") return AlphaPolicy::performance;
  if (s == "explicit") return AlphaPolicy::explicit_list;
  throw SchemaError(path, "alpha policy must be uniform, cohort_size, performance or explicit");
}

inline std::string to_string(AlphaPolicy p) {
  switch (p) {
    case AlphaPolicy::uniform: return "uniform";
    case AlphaPolicy::cohort_size: return "cohort_size";
    case AlphaPolicy::performance: return "performance";
    case AlphaPolicy::explicit_list: return "explicit";
  }
  return "?";
}

enum class BiasPrior { source_mean, zero, explicit_value };

inline BiasPrior bias_prior_from_string(std::string_view s, const std::string& path) {
  if (s == "source_mean") return BiasPrior::source_mean;
  if (s == "zero") return BiasPrior::zero;
  if (s == "explicit") return BiasPrior::explicit_value;
  throw SchemaError(path, "bias prior must be source_mean, zero or explicit");
}

inline std::string to_string(BiasPrior p) {
  switch (p) {
    case BiasPrior::source_mean: return "source_mean";
    case BiasPrior::zero: return "zero";
    case BiasPrior::explicit_value: return "explicit";
  }
  return "?";
}

struct TransferConfig {
  AlphaPolicy alpha_policy = AlphaPolicy::uniform;
  std::vector<double> explicit_alphas;  // used only with the explicit policy
  double lambda = 0.0;                  // bias penalty coefficient, >= 0
  BiasPrior bias_prior = BiasPrior::source_mean;
  double bias_prior_value = 0.0;        // used only with the explicit prior
};

// Mixing coefficients, always normalized to sum 1.
//   uniform:      1/n for every source
//   cohort_size:  proportional to each source's cohort size
//   performance:  proportional to max(reported_auroc - 0.5, 1e-6)
//   explicit:     caller-supplied non-negative values, normalized
inline std::vector<double> compute_alphas(std::span<const LogisticModel> sources,
                                          const TransferConfig& config) {
  const std::size_t n = sources.size();
  if (n == 0) throw PolicyError("compute_alphas requires at least one source model");
  std::vector<double> alphas(n, 0.0);
  switch (config.alpha_policy) {
    case AlphaPolicy::uniform: {
      std::fill(alphas.begin(), alphas.end(), 1.0 / static_cast<double>(n));
      return alphas;  // already sums to 1
    }
    case AlphaPolicy::cohort_size: {
      for (std::size_t i = 0; i < n; ++i)
        alphas[i] = static_cast<double>(sources[i].meta.cohort_size);
      break;
    }
    case AlphaPolicy::performance: {
      constexpr double eps = 1e-6;
      for (std::size_t i = 0; i < n; ++i) {
        if (!sources[i].meta.reported_auroc)
          throw PolicyError("performance alpha policy requires reported_auroc on '" +
                            sources[i].model_id + "'");
        alphas[i] = std::max(*sources[i].meta.reported_auroc - 0.5, eps);
      }
      break;
    }
    case AlphaPolicy::explicit_list: {
      if (config.explicit_alphas.size() != n)
        throw PolicyError("explicit alpha list length must equal the number of sources");
      for (double a : config.explicit_alphas)
        if (a < 0.0) throw PolicyError("explicit alphas must be non-negative");
      alphas.assign(config.explicit_alphas.begin(), config.explicit_alphas.end());
      break;
    }
  }
  double total = 0.0;
  for (double a : alphas) total += a;
  if (!(total > 0.0)) throw PolicyError("alpha coefficients must have a positive sum");
  for (double& a : alphas) a /= total;
  return alphas;
}

// W'_j = sum_i alpha_i * W_ij, source index ascending.
inline std::vector<double> weight_transfer(std::span<const AlignedModel> aligned,
                                           std::span<const double> alphas) {
  if (aligned.empty()) throw PolicyError("weight_transfer requires at least one source model");
  if (alphas.size() != aligned.size())
    throw ConfigError("alpha count does not match source count");
  const std::size_t m = aligned.front().weights.size();
  for (const auto& a : aligned)
    if (a.weights.size() != m)
      throw ConfigError("aligned models disagree on feature dimension");
  std::vector<double> combined(m, 0.0);
  for (std::size_t i = 0; i < aligned.size(); ++i)
    for (std::size_t j = 0; j < m; ++j) combined[j] += alphas[i] * aligned[i].weights[j];
  return combined;
}

struct TransferProvenance {
  std::vector<double> alphas;
  double lambda = 0.0;
  std::string filter_policy_tag;
  std::vector<std::string> source_model_ids;
  double source_bias_mean = 0.0;
};

struct InitializedTarget {
  std::vector<double> weights;  // masked combination, length m
  double bias = 0.0;
  TransferProvenance provenance;
};

inline double source_bias_mean(std::span<const AlignedModel> aligned) {
  double sum = 0.0;
  for (const auto& a : aligned) sum += a.bias;
  return sum / static_cast<double>(aligned.size());
}

// Target initialization:
//   weights_j = sum_i alpha_i * (W_ij * F_j)
//   bias      = prior - lambda * (prior - mean_i b_i)
// The filter applies to weights; the penalty applies to the bias coordinate
// (the two terms live in different dimensions, so they cannot share one sum).
// With the source_mean prior the bias lands on the source mean for every
// lambda; the same lambda also anchors the bias during fine-tuning.
inline InitializedTarget fatl_init(std::span<const AlignedModel> aligned,
                                   std::span<const double> alphas,
                                   const FeatureFilter& filter,
                                   const TransferConfig& config,
                                   std::span<const std::string> model_ids = {}) {
  if (aligned.empty()) throw PolicyError("fatl_init requires at least one source model");
  if (alphas.size() != aligned.size())
    throw ConfigError("alpha count does not match source count");
  if (config.lambda < 0.0) throw ConfigError("lambda must be non-negative");
  const std::size_t m = aligned.front().weights.size();
  for (const auto& a : aligned)
    if (a.weights.size() != m)
      throw ConfigError("aligned models disagree on feature dimension");
  if (filter.values.size() != m)
    throw ConfigError("filter length does not match feature dimension");
  for (double f : filter.values)
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("filter values must lie in [0, 1]");

  InitializedTarget out;
  out.weights.assign(m, 0.0);
  for (std::size_t i = 0; i < aligned.size(); ++i)
    for (std::size_t j = 0; j < m; ++j)
      out.weights[j] += alphas[i] * (aligned[i].weights[j] * filter.values[j]);

  const double mean_bias = source_bias_mean(aligned);
  double prior = 0.0;
  switch (config.bias_prior) {
    case BiasPrior::source_mean: prior = mean_bias; break;
    case BiasPrior::zero: prior = 0.0; break;
    case BiasPrior::explicit_value: prior = config.bias_prior_value; break;
  }
  out.bias = prior - config.lambda * (prior - mean_bias);

  out.provenance.alphas.assign(alphas.begin(), alphas.end());
  out.provenance.lambda = config.lambda;
  out.provenance.filter_policy_tag = filter.policy_tag;
  out.provenance.source_model_ids.assign(model_ids.begin(), model_ids.end());
  out.provenance.source_bias_mean = mean_bias;
  return out;
}

}  // namespace fatl
