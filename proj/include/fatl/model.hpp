#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fatl/errors.hpp"
#include "fatl/json_util.hpp"
#include "fatl/registry.hpp"

// Logistic models over (a subset of) the canonical feature space, alignment
// into registry order, and deterministic JSON serialization.

namespace fatl {

inline constexpr int kModelFormatVersion = 1;

struct ModelMeta {
  std::uint64_t cohort_size = 1;
  std::string population_tag;
  std::optional<double> reported_auroc;  // in [0.5, 1.0] when present
};

// One trained linear-logistic model: weights live in the standardized space
// defined by the model's own (means, stds). Used for sources and targets.
struct LogisticModel {
  std::string model_id;
  std::vector<std::string> feature_ids;  // the model's native space
  std::vector<double> weights;           // aligned to feature_ids
  double bias = 0.0;
  FeatureStats standardization;          // aligned to feature_ids
  ModelMeta meta;
};

inline void validate_model(const LogisticModel& model) {
  const std::size_t k = model.feature_ids.size();
  if (k == 0) throw SchemaError("feature_ids", "model must cover at least one feature");
  if (model.weights.size() != k)
    throw SchemaError("weights", "length must match feature_ids");
  if (model.standardization.means.size() != k || model.standardization.stds.size() != k)
    throw SchemaError("standardization", "means/stds length must match feature_ids");
  std::map<std::string, bool, std::less<>> seen;
  for (const auto& id : model.feature_ids)
    if (!seen.emplace(id, true).second) throw DuplicateFeature(id);
  for (double s : model.standardization.stds)
    if (!(s > 0.0) || !std::isfinite(s))
      throw SchemaError("standardization.stds", "stds must be positive and finite");
  if (model.meta.cohort_size < 1)
    throw SchemaError("meta.cohort_size", "must be at least 1");
  if (model.meta.reported_auroc) {
    const double a = *model.meta.reported_auroc;
    if (!(a >= 0.5 && a <= 1.0))
      throw SchemaError("meta.reported_auroc", "must lie in [0.5, 1.0]");
  }
  if (!std::isfinite(model.bias)) throw SchemaError("bias", "must be finite");
  for (double w : model.weights)
    if (!std::isfinite(w)) throw SchemaError("weights", "must be finite");
}

struct AlignedModel {
  std::vector<double> weights;  // length m, registry order; 0 where not covered
  double bias = 0.0;
  std::vector<bool> coverage;   // true where the source natively had the feature
};

// Permutes a model's weights into registry order, zero-filling features the
// model never saw. The coverage mask preserves which zeros are structural.
inline AlignedModel align(const LogisticModel& model, const FeatureRegistry& registry) {
  validate_model(model);
  AlignedModel out;
  out.weights.assign(registry.size(), 0.0);
  out.coverage.assign(registry.size(), false);
  out.bias = model.bias;
  for (std::size_t k = 0; k < model.feature_ids.size(); ++k) {
    const auto idx = registry.index_of(model.feature_ids[k]);
    if (!idx) throw AlignmentError(model.feature_ids[k]);
    out.weights[*idx] = model.weights[k];
    out.coverage[*idx] = true;
  }
  return out;
}

inline json model_to_json(const LogisticModel& model) {
  validate_model(model);
  json j = json::object();
  j["format_version"] = kModelFormatVersion;
  j["model_id"] = model.model_id;
  j["feature_ids"] = model.feature_ids;
  j["weights"] = model.weights;
  j["bias"] = json::array({model.bias});  // length-1 vector, single-output task
  json st = json::object();
  st["means"] = model.standardization.means;
  st["stds"] = model.standardization.stds;
  j["standardization"] = std::move(st);
  json meta = json::object();
  meta["cohort_size"] = model.meta.cohort_size;
  meta["population_tag"] = model.meta.population_tag;
  if (model.meta.reported_auroc) meta["reported_auroc"] = *model.meta.reported_auroc;
  j["meta"] = std::move(meta);
  return j;
}

inline LogisticModel model_from_json(const json& j, const std::string& path) {
  reject_unknown_keys(j, {"format_version", "model_id", "feature_ids", "weights", "bias",
                          "standardization", "meta"}, path);
  const std::uint64_t version = get_uint(j, "format_version", path);
  if (version != static_cast<std::uint64_t>(kModelFormatVersion))
    throw SchemaError(path + ".format_version",
                      "unsupported version " + std::to_string(version));
  LogisticModel model;
  model.model_id = get_string(j, "model_id", path);
  for (const auto& v : get_array(j, "feature_ids", path)) {
    if (!v.is_string()) throw SchemaError(path + ".feature_ids", "expected strings");
    model.feature_ids.push_back(v.get<std::string>());
  }
  for (const auto& v : get_array(j, "weights", path)) {
    if (!v.is_number()) throw SchemaError(path + ".weights", "expected numbers");
    model.weights.push_back(v.get<double>());
  }
  const json& bias = get_array(j, "bias", path);
  if (bias.size() != 1 || !bias[0].is_number())
    throw SchemaError(path + ".bias", "expected a length-1 numeric array");
  model.bias = bias[0].get<double>();
  const json& st = get_object(j, "standardization", path);
  reject_unknown_keys(st, {"means", "stds"}, path + ".standardization");
  for (const auto& v : get_array(st, "means", path + ".standardization"))
    model.standardization.means.push_back(v.get<double>());
  for (const auto& v : get_array(st, "stds", path + ".standardization"))
    model.standardization.stds.push_back(v.get<double>());
  const json& meta = get_object(j, "meta", path);
  reject_unknown_keys(meta, {"cohort_size", "population_tag", "reported_auroc"}, path + ".meta");
  model.meta.cohort_size = get_uint(meta, "cohort_size", path + ".meta");
  model.meta.population_tag = get_string(meta, "population_tag", path + ".meta");
  if (meta.contains("reported_auroc"))
    model.meta.reported_auroc = get_double(meta, "reported_auroc", path + ".meta");
  validate_model(model);
  return model;
}

// Identical models produce byte-identical files: keys are emitted in fixed
// order and numbers use shortest exact-roundtrip decimal form.
inline void save_model(const LogisticModel& model, const std::filesystem::path& path) {
  write_json_file(path, model_to_json(model));
}

inline LogisticModel load_model(const std::filesystem::path& path) {
  return model_from_json(parse_json_file(path), path.string());
}

// Standardized input vector in the model's native space. Missing features
// impute to 0 under either policy once the model's own stats are applied.
inline std::vector<double> standardize_for_model(const LogisticModel& model,
                                                 const CanonicalRecord& record,
                                                 const FeatureRegistry& registry,
                                                 ImputePolicy policy) {
  std::vector<double> x(model.feature_ids.size(), 0.0);
  for (std::size_t k = 0; k < model.feature_ids.size(); ++k) {
    const auto idx = registry.index_of(model.feature_ids[k]);
    if (!idx) throw AlignmentError(model.feature_ids[k]);
    if (record.observed[*idx]) {
      x[k] = (record.values[*idx] - model.standardization.means[k]) /
             model.standardization.stds[k];
    } else if (policy == ImputePolicy::population_mean) {
      x[k] = 0.0;  // mean imputation standardizes to zero by definition
    } else {
      x[k] = 0.0;
    }
  }
  return x;
}

}  // namespace fatl
