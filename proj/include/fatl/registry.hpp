#pragma once

#include <cctype>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fatl/errors.hpp"
#include "fatl/json_util.hpp"

// Canonical feature space plus harmonization of raw, heterogeneous records
// into it. The registry fixes feature order; every vector in the rest of the
// library is aligned to that order.

namespace fatl {

enum class FeatureCategory { vital_sign, lab_value, demographic };

inline std::string to_string(FeatureCategory c) {
  switch (c) {
    case FeatureCategory::vital_sign: return "vital_sign";
    case FeatureCategory::lab_value: return "lab_value";
    case FeatureCategory::demographic: return "demographic";
  }
  return "?";
}

inline FeatureCategory category_from_string(std::string_view s, const std::string& path) {
  if (s == "vital_sign") return FeatureCategory::vital_sign;
  if (s == "lab_value") return FeatureCategory::lab_value;
  if (s == "demographic") return FeatureCategory::demographic;
  throw SchemaError(path, "category must be vital_sign, lab_value or demographic");
}

struct Interval {
  double min = 0.0;
  double max = 0.0;
  bool contains(double v) const { return v >= min && v <= max; }
};

struct FeatureDescriptor {
  std::string id;             // lowercase snake, unique within a registry
  std::string display_name;
  FeatureCategory category = FeatureCategory::vital_sign;
  std::string canonical_unit;
  Interval plausible_range;
  bool higher_is_worse = false;
};

inline bool is_snake_case_id(std::string_view id) {
  if (id.empty()) return false;
  if (!(std::islower(static_cast<unsigned char>(id.front())))) return false;
  for (char c : id)
    if (!(std::islower(static_cast<unsigned char>(c)) ||
          std::isdigit(static_cast<unsigned char>(c)) || c == '_'))
      return false;
  return true;
}

class FeatureRegistry {
 public:
  explicit FeatureRegistry(std::vector<FeatureDescriptor> descriptors)
      : descriptors_(std::move(descriptors)) {
    if (descriptors_.empty()) throw EmptyRegistry();
    for (std::size_t i = 0; i < descriptors_.size(); ++i) {
      const auto& d = descriptors_[i];
      if (!is_snake_case_id(d.id))
        throw SchemaError("features[" + std::to_string(i) + "].id",
                          "'" + d.id + "' is not a lowercase snake_case identifier");
      if (!(d.plausible_range.min < d.plausible_range.max))
        throw SchemaError("features[" + std::to_string(i) + "].plausible_range",
                          "min must be below max for '" + d.id + "'");
      if (!index_.emplace(d.id, i).second) throw DuplicateFeature(d.id);
    }
  }

  std::size_t size() const { return descriptors_.size(); }
  const FeatureDescriptor& at(std::size_t i) const { return descriptors_[i]; }
  const std::vector<FeatureDescriptor>& descriptors() const { return descriptors_; }

  std::optional<std::size_t> index_of(std::string_view id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Index order is the input order; callers rely on it being stable.
  std::vector<std::string> feature_ids() const {
    std::vector<std::string> ids;
    ids.reserve(descriptors_.size());
    for (const auto& d : descriptors_) ids.push_back(d.id);
    return ids;
  }

 private:
  std::vector<FeatureDescriptor> descriptors_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

inline FeatureRegistry build_registry(std::vector<FeatureDescriptor> descriptors) {
  return FeatureRegistry(std::move(descriptors));
}

// canonical = scale * raw + offset
struct HarmonizationRule {
  std::string alias;      // raw-schema field name
  std::string target_id;  // canonical feature id
  double scale = 1.0;
  double offset = 0.0;
};

struct CanonicalRecord {
  std::vector<double> values;   // length m, canonical units
  std::vector<bool> observed;   // false = missing

  bool operator==(const CanonicalRecord&) const = default;
};

struct QualityFlag {
  std::string feature_id;
  double value = 0.0;
};

// Out-of-range values are flagged and kept, never clamped.
struct QualityFlags {
  std::vector<QualityFlag> out_of_range;
  std::vector<std::string> unmapped_fields;  // raw fields with no rule
  bool clean() const { return out_of_range.empty(); }
};

struct HarmonizeResult {
  CanonicalRecord record;
  QualityFlags flags;
};

inline void validate_rules(std::span<const HarmonizationRule> rules,
                           const FeatureRegistry& registry) {
  std::map<std::string, std::size_t, std::less<>> seen;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    const auto& r = rules[i];
    if (r.scale == 0.0)
      throw SchemaError("rules[" + std::to_string(i) + "].scale", "scale must be nonzero");
    if (!registry.index_of(r.target_id)) throw UnknownFeature(r.target_id);
    if (!seen.emplace(r.alias, i).second) throw DuplicateAlias(r.alias);
  }
}

// Converts a raw field map into a canonical record. Unmapped canonical
// features come back unobserved; out-of-range values are flagged but kept.
inline HarmonizeResult harmonize_record(const std::map<std::string, double>& raw,
                                        std::span<const HarmonizationRule> rules,
                                        const FeatureRegistry& registry) {
  validate_rules(rules, registry);
  const std::size_t m = registry.size();
  HarmonizeResult out;
  out.record.values.assign(m, 0.0);
  out.record.observed.assign(m, false);

  // alias -> rule, so lookup cost does not depend on rule order
  std::map<std::string_view, const HarmonizationRule*> by_alias;
  for (const auto& r : rules) by_alias.emplace(r.alias, &r);

  std::vector<std::string> provider(m);  // alias that populated each feature
  for (const auto& [field, value] : raw) {
    auto it = by_alias.find(field);
    if (it == by_alias.end()) {
      out.flags.unmapped_fields.push_back(field);
      continue;
    }
    const HarmonizationRule& rule = *it->second;
    const std::size_t j = *registry.index_of(rule.target_id);
    if (out.record.observed[j])
      throw AmbiguousMapping(rule.target_id, provider[j], rule.alias);
    const double canonical = rule.scale * value + rule.offset;
    out.record.values[j] = canonical;
    out.record.observed[j] = true;
    provider[j] = rule.alias;
    if (!registry.at(j).plausible_range.contains(canonical))
      out.flags.out_of_range.push_back({rule.target_id, canonical});
  }
  return out;
}

enum class ImputePolicy { zero_after_standardize, population_mean };

inline ImputePolicy impute_policy_from_string(std::string_view s, const std::string& path) {
  if (s == "zero_after_standardize") return ImputePolicy::zero_after_standardize;
  if (s == "population_mean") return ImputePolicy::population_mean;
  throw SchemaError(path, "impute policy must be zero_after_standardize or population_mean");
}

inline std::string to_string(ImputePolicy p) {
  return p == ImputePolicy::zero_after_standardize ? "zero_after_standardize"
                                                   : "population_mean";
}

struct FeatureStats {
  std::vector<double> means;
  std::vector<double> stds;
};

// Dense standardized vector: observed entries become (v - mean) / std,
// missing entries are filled per policy (both supplied policies land on 0
// once standardization is applied with the same stats).
inline std::vector<double> impute(const CanonicalRecord& record, ImputePolicy policy,
                                  const FeatureStats& stats, const FeatureRegistry& registry) {
  const std::size_t m = registry.size();
  if (record.values.size() != m || record.observed.size() != m)
    throw ConfigError("record length does not match registry size");
  if (stats.means.size() != m || stats.stds.size() != m)
    throw ConfigError("stats do not cover all registry features");
  std::vector<double> x(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    if (!(stats.stds[j] > 0.0)) throw DegenerateFeature(registry.at(j).id);
    if (record.observed[j]) {
      x[j] = (record.values[j] - stats.means[j]) / stats.stds[j];
    } else if (policy == ImputePolicy::population_mean) {
      x[j] = (stats.means[j] - stats.means[j]) / stats.stds[j];
    } else {
      x[j] = 0.0;
    }
  }
  return x;
}

// Per-feature mean/std over observed values only (population denominator).
inline FeatureStats compute_stats(std::span<const CanonicalRecord> records,
                                  const FeatureRegistry& registry) {
  const std::size_t m = registry.size();
  FeatureStats stats;
  stats.means.assign(m, 0.0);
  stats.stds.assign(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    std::size_t n = 0;
    double sum = 0.0;
    for (const auto& r : records)
      if (r.observed[j]) { sum += r.values[j]; ++n; }
    if (n == 0) throw DegenerateFeature(registry.at(j).id);
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& r : records)
      if (r.observed[j]) { const double d = r.values[j] - mean; ss += d * d; }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (!(sd > 0.0)) throw DegenerateFeature(registry.at(j).id);
    stats.means[j] = mean;
    stats.stds[j] = sd;
  }
  return stats;
}

struct RegistryFile {
  FeatureRegistry registry;
  std::vector<HarmonizationRule> rules;
};

// Registry + rules JSON: {"features": [...], "rules": [...]}.
// Unknown keys anywhere are schema errors.
inline RegistryFile load_registry_file(const std::filesystem::path& path) {
  const json doc = parse_json_file(path);
  reject_unknown_keys(doc, {"features", "rules"}, path.string());
  const json& features = get_array(doc, "features", path.string());
  if (features.empty()) throw EmptyRegistry();

  std::vector<FeatureDescriptor> descriptors;
  descriptors.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    const std::string fpath = "features[" + std::to_string(i) + "]";
    const json& f = features[i];
    reject_unknown_keys(f, {"id", "display_name", "category", "canonical_unit",
                            "plausible_range", "higher_is_worse"}, fpath);
    FeatureDescriptor d;
    d.id = get_string(f, "id", fpath);
    d.display_name = get_string(f, "display_name", fpath);
    d.category = category_from_string(get_string(f, "category", fpath), fpath + ".category");
    d.canonical_unit = get_string(f, "canonical_unit", fpath);
    const json& range = get_object(f, "plausible_range", fpath);
    reject_unknown_keys(range, {"min", "max"}, fpath + ".plausible_range");
    d.plausible_range.min = get_double(range, "min", fpath + ".plausible_range");
    d.plausible_range.max = get_double(range, "max", fpath + ".plausible_range");
    d.higher_is_worse = get_bool(f, "higher_is_worse", fpath);
    descriptors.push_back(std::move(d));
  }

  RegistryFile out{FeatureRegistry(std::move(descriptors)), {}};

  if (doc.contains("rules")) {
    const json& rules = doc["rules"];
    if (!rules.is_array()) throw SchemaError(path.string() + ".rules", "expected an array");
    for (std::size_t i = 0; i < rules.size(); ++i) {
      const std::string rpath = "rules[" + std::to_string(i) + "]";
      const json& r = rules[i];
      reject_unknown_keys(r, {"alias", "target_id", "scale", "offset"}, rpath);
      HarmonizationRule rule;
      rule.alias = get_string(r, "alias", rpath);
      rule.target_id = get_string(r, "target_id", rpath);
      rule.scale = get_double(r, "scale", rpath);
      rule.offset = get_double(r, "offset", rpath);
      out.rules.push_back(std::move(rule));
    }
    validate_rules(out.rules, out.registry);
  }
  return out;
}

}  // namespace fatl
