#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fatl/errors.hpp"
#include "fatl/json_util.hpp"
#include "fatl/registry.hpp"

// Aggregates per-study feature-importance reports into the per-feature
// filter vector that gates which source weights transfer.

namespace fatl {

struct ImportanceProfile {
  std::string study_id;
  std::map<std::string, double> entries;  // canonical feature id -> score >= 0
  std::optional<int> top_k_listed;        // how many features the study reported
};

struct FeatureFilter {
  std::vector<double> values;  // length m, each in [0, 1]
  std::string policy_tag;
};

enum class FilterPolicyKind { frequency, mean_normalized, top_k_binary };

struct FilterPolicy {
  FilterPolicyKind kind = FilterPolicyKind::frequency;
  int k = 0;       // top_k_binary only
  double q = 0.0;  // top_k_binary only: required fraction of profiles

  static FilterPolicy frequency() { return {FilterPolicyKind::frequency, 0, 0.0}; }
  static FilterPolicy mean_normalized() { return {FilterPolicyKind::mean_normalized, 0, 0.0}; }
  static FilterPolicy top_k_binary(int k, double q) {
    return {FilterPolicyKind::top_k_binary, k, q};
  }

  std::string tag() const {
    switch (kind) {
      case FilterPolicyKind::frequency: return "frequency";
      case FilterPolicyKind::mean_normalized: return "mean_normalized";
      case FilterPolicyKind::top_k_binary: {
        std::ostringstream ss;
        ss << "top_k_binary(k=" << k << ",q=" << q << ")";
        return ss.str();
      }
    }
    return "?";
  }
};

inline void validate_profiles(std::span<const ImportanceProfile> profiles,
                              const FeatureRegistry& registry) {
  for (const auto& p : profiles) {
    if (p.entries.empty())
      throw ConfigError("profile '" + p.study_id + "' has no entries");
    for (const auto& [id, score] : p.entries) {
      if (!registry.index_of(id)) throw UnknownFeature(id);
      if (score < 0.0)
        throw ConfigError("profile '" + p.study_id + "' has a negative score for '" + id + "'");
    }
  }
}

namespace detail {

// Registry indices of the top-k scores of one profile. Ties at the k-th
// place break toward the lower registry index so the result is stable.
inline std::vector<std::size_t> top_k_indices(const ImportanceProfile& profile,
                                              const FeatureRegistry& registry, int k) {
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(profile.entries.size());
  for (const auto& [id, score] : profile.entries)
    scored.emplace_back(score, *registry.index_of(id));
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)),
                                                 scored.size());
  std::vector<std::size_t> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(scored[i].second);
  return out;
}

}  // namespace detail

// frequency:        F_j = (#profiles mentioning j) / n
// mean_normalized:  per-profile scores are divided by that profile's max,
//                   then averaged; absent features contribute 0
// top_k_binary:     F_j = 1 iff j is in the top-k of at least fraction q of profiles
// Features no profile mentions end up suppressed (F_j = 0), not an error.
inline FeatureFilter compute_filter(std::span<const ImportanceProfile> profiles,
                                    const FeatureRegistry& registry,
                                    const FilterPolicy& policy) {
  if (profiles.empty()) throw ConfigError("compute_filter requires at least one profile");
  validate_profiles(profiles, registry);
  const std::size_t m = registry.size();
  const double n = static_cast<double>(profiles.size());
  FeatureFilter filter;
  filter.values.assign(m, 0.0);
  filter.policy_tag = policy.tag();

  switch (policy.kind) {
    case FilterPolicyKind::frequency: {
      for (const auto& p : profiles)
        for (const auto& [id, score] : p.entries) {
          (void)score;
          filter.values[*registry.index_of(id)] += 1.0;
        }
      for (double& v : filter.values) v /= n;
      break;
    }
    case FilterPolicyKind::mean_normalized: {
      for (const auto& p : profiles) {
        double max_score = 0.0;
        for (const auto& [id, score] : p.entries) max_score = std::max(max_score, score);
        if (max_score <= 0.0) continue;  // all-zero profile contributes nothing
        for (const auto& [id, score] : p.entries)
          filter.values[*registry.index_of(id)] += score / max_score;
      }
      for (double& v : filter.values) v /= n;
      break;
    }
    case FilterPolicyKind::top_k_binary: {
      if (policy.k <= 0) throw ConfigError("top_k_binary requires k >= 1");
      if (!(policy.q > 0.0 && policy.q <= 1.0))
        throw ConfigError("top_k_binary requires q in (0, 1]");
      std::vector<std::size_t> counts(m, 0);
      for (const auto& p : profiles)
        for (std::size_t j : detail::top_k_indices(p, registry, policy.k)) ++counts[j];
      for (std::size_t j = 0; j < m; ++j)
        filter.values[j] = (static_cast<double>(counts[j]) / n >= policy.q) ? 1.0 : 0.0;
      break;
    }
  }
  return filter;
}

inline FeatureFilter binarize(const FeatureFilter& filter, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("binarize threshold must lie in (0, 1)");
  FeatureFilter out;
  out.values.reserve(filter.values.size());
  for (double v : filter.values) out.values.push_back(v >= threshold ? 1.0 : 0.0);
  std::ostringstream tag;
  tag << filter.policy_tag << "|binarize(" << threshold << ")";
  out.policy_tag = tag.str();
  return out;
}

// Profiles JSON: array of {study_id, entries: {feature_id: score}, top_k_listed?}.
inline std::vector<ImportanceProfile> load_profiles_file(const std::filesystem::path& path,
                                                         const FeatureRegistry& registry) {
  const json doc = parse_json_file(path);
  if (!doc.is_array()) throw SchemaError(path.string(), "expected a JSON array of profiles");
  std::vector<ImportanceProfile> profiles;
  profiles.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::string ppath = path.string() + "[" + std::to_string(i) + "]";
    const json& p = doc[i];
    reject_unknown_keys(p, {"study_id", "entries", "top_k_listed"}, ppath);
    ImportanceProfile profile;
    profile.study_id = get_string(p, "study_id", ppath);
    const json& entries = get_object(p, "entries", ppath);
    for (auto it = entries.begin(); it != entries.end(); ++it) {
      if (!it.value().is_number())
        throw SchemaError(ppath + ".entries." + it.key(), "expected a number");
      profile.entries.emplace(it.key(), it.value().get<double>());
    }
    if (p.contains("top_k_listed"))
      profile.top_k_listed = static_cast<int>(get_uint(p, "top_k_listed", ppath));
    profiles.push_back(std::move(profile));
  }
  validate_profiles(profiles, registry);
  return profiles;
}

}  // namespace fatl
