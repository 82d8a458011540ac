#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <system_error>
#include <vector>

#include "fatl/errors.hpp"
#include "fatl/json_util.hpp"
#include "fatl/registry.hpp"
#include "fatl/rng.hpp"
#include "fatl/trainer.hpp"

// Synthetic multi-site cohorts with population shift. Generation is a pure
// function of (spec, seed): each patient/feature draw has its own counter in
// the SplitMix64 stream, so draw order never matters.

namespace fatl {

struct FeaturePopulation {
  double mean = 0.0;
  double std = 1.0;
  double missing_rate = 0.0;  // in [0, 1)
};

struct PopulationSpec {
  std::string site_id;
  std::vector<std::string> feature_ids;      // registry order
  std::vector<FeaturePopulation> features;   // registry order
  std::vector<double> risk_weights;          // ground truth, standardized space
  double risk_bias = 0.0;
  std::uint64_t n_patients = 0;
  std::uint64_t seed = 0;
};

inline void validate_spec(const PopulationSpec& spec, const FeatureRegistry& registry) {
  const std::size_t m = registry.size();
  if (spec.feature_ids.size() != m || spec.features.size() != m ||
      spec.risk_weights.size() != m)
    throw CohortError("population spec '" + spec.site_id +
                      "' does not cover the registry feature space");
  for (std::size_t j = 0; j < m; ++j) {
    if (spec.feature_ids[j] != registry.at(j).id)
      throw CohortError("population spec '" + spec.site_id + "' feature order mismatch at '" +
                        spec.feature_ids[j] + "'");
    if (!(spec.features[j].std > 0.0))
      throw CohortError("population spec '" + spec.site_id + "': std must be positive for '" +
                        spec.feature_ids[j] + "'");
    const double r = spec.features[j].missing_rate;
    if (!(r >= 0.0 && r < 1.0))
      throw CohortError("population spec '" + spec.site_id +
                        "': missing_rate must lie in [0, 1) for '" + spec.feature_ids[j] + "'");
  }
  if (spec.n_patients < 1)
    throw CohortError("population spec '" + spec.site_id + "': n_patients must be at least 1");
}

struct Cohort {
  std::vector<CanonicalRecord> records;
  std::vector<int> labels;
  std::string site_id;
  std::uint64_t seed = 0;  // effective seed after single-class retries
};

namespace detail {

// Counter layout per patient: 3 values per feature (two normal draws, one
// missingness draw) plus one label draw at the end of the block.
inline Cohort generate_once(const PopulationSpec& spec, const FeatureRegistry& registry,
                            std::uint64_t seed) {
  const std::size_t m = registry.size();
  const std::uint64_t block = 3 * static_cast<std::uint64_t>(m) + 1;
  Cohort cohort;
  cohort.site_id = spec.site_id;
  cohort.seed = seed;
  cohort.records.reserve(spec.n_patients);
  cohort.labels.reserve(spec.n_patients);
  for (std::uint64_t i = 0; i < spec.n_patients; ++i) {
    const std::uint64_t base = i * block;
    CanonicalRecord rec;
    rec.values.assign(m, 0.0);
    rec.observed.assign(m, true);
    double risk_logit = spec.risk_bias;
    for (std::size_t j = 0; j < m; ++j) {
      const std::uint64_t c = base + 3 * j;
      const double z = counter_normal(seed, c, c + 1);
      risk_logit += spec.risk_weights[j] * z;  // risk sees the unclipped draw
      const auto& range = registry.at(j).plausible_range;
      double value = spec.features[j].mean + spec.features[j].std * z;
      value = std::clamp(value, range.min, range.max);
      rec.values[j] = value;
      if (to_unit(counter_value(seed, c + 2)) < spec.features[j].missing_rate) {
        rec.observed[j] = false;
        rec.values[j] = 0.0;
      }
    }
    const double p = stable_sigmoid(risk_logit);
    cohort.labels.push_back(to_unit(counter_value(seed, base + 3 * m)) < p ? 1 : 0);
    cohort.records.push_back(std::move(rec));
  }
  return cohort;
}

}  // namespace detail

inline bool single_class(std::span<const int> labels) {
  bool pos = false, neg = false;
  for (int y : labels) (y == 1 ? pos : neg) = true;
  return !(pos && neg);
}

// Single-class cohorts are regenerated at seed+1, up to 8 attempts; the
// provenance records the seed that actually produced the cohort.
inline Cohort generate_cohort(const PopulationSpec& spec, const FeatureRegistry& registry) {
  validate_spec(spec, registry);
  constexpr int kMaxAttempts = 8;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Cohort cohort = detail::generate_once(spec, registry, spec.seed + attempt);
    if (!single_class(cohort.labels)) return cohort;
  }
  throw CohortError("cohort for site '" + spec.site_id + "' was single-class after " +
                    std::to_string(kMaxAttempts) + " attempts");
}

inline PopulationSpec shift_population(const PopulationSpec& spec, std::string_view feature_id,
                                       double delta_mean, double scale_std) {
  if (!(scale_std > 0.0)) throw CohortError("std scale must be positive");
  PopulationSpec out = spec;
  bool found = false;
  for (std::size_t j = 0; j < out.feature_ids.size(); ++j) {
    if (out.feature_ids[j] == feature_id) {
      out.features[j].mean += delta_mean;
      out.features[j].std *= scale_std;
      found = true;
      break;
    }
  }
  if (!found) throw UnknownFeature(std::string(feature_id));
  out.site_id = spec.site_id + "_shifted";
  return out;
}

// ---------------------------------------------------------------------------
// File formats

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Cohort CSV: header is the canonical ids plus "label"; missing values are
// empty cells. Numbers use shortest exact-roundtrip form.
inline void save_cohort_csv(const Cohort& cohort, const FeatureRegistry& registry,
                            const std::filesystem::path& path) {
  std::string text;
  for (std::size_t j = 0; j < registry.size(); ++j) {
    text += registry.at(j).id;
    text += ',';
  }
  text += "label\n";
  for (std::size_t i = 0; i < cohort.records.size(); ++i) {
    const auto& rec = cohort.records[i];
    for (std::size_t j = 0; j < registry.size(); ++j) {
      if (rec.observed[j]) text += format_double(rec.values[j]);
      text += ',';
    }
    text += cohort.labels[i] == 1 ? '1' : '0';
    text += '\n';
  }
  write_text_file(path, text);
}

inline Cohort load_cohort_csv(const std::filesystem::path& path,
                              const FeatureRegistry& registry) {
  const std::string text = read_text_file(path);
  const std::size_t m = registry.size();
  Cohort cohort;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    line = std::string_view(text).substr(pos, end - pos);
    pos = end + 1;
    return true;
  };
  std::string_view header;
  if (!next_line(header)) throw SchemaError(path.string(), "empty cohort file");
  {
    std::size_t col = 0, start = 0;
    std::string_view expect;
    for (std::size_t i = 0; i <= header.size(); ++i) {
      if (i == header.size() || header[i] == ',') {
        const std::string_view cell = header.substr(start, i - start);
        expect = col < m ? std::string_view(registry.at(col).id) : std::string_view("label");
        if (col > m || cell != expect)
          throw SchemaError(path.string(), "cohort header does not match the registry");
        ++col;
        start = i + 1;
      }
    }
    if (col != m + 1) throw SchemaError(path.string(), "cohort header has wrong column count");
  }
  std::string_view line;
  std::size_t row = 0;
  while (next_line(line)) {
    if (line.empty()) continue;
    CanonicalRecord rec;
    rec.values.assign(m, 0.0);
    rec.observed.assign(m, false);
    std::size_t col = 0, start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        const std::string_view cell = line.substr(start, i - start);
        const std::string cpath =
            path.string() + " row " + std::to_string(row) + " col " + std::to_string(col);
        if (col < m) {
          if (!cell.empty()) {
            double v = 0.0;
            auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
              throw SchemaError(cpath, "bad numeric cell");
            rec.values[col] = v;
            rec.observed[col] = true;
          }
        } else if (col == m) {
          if (cell == "1") cohort.labels.push_back(1);
          else if (cell == "0") cohort.labels.push_back(0);
          else throw SchemaError(cpath, "label must be 0 or 1");
        } else {
          throw SchemaError(cpath, "too many columns");
        }
        ++col;
        start = i + 1;
      }
    }
    if (col != m + 1)
      throw SchemaError(path.string() + " row " + std::to_string(row), "wrong column count");
    cohort.records.push_back(std::move(rec));
    ++row;
  }
  return cohort;
}

inline void save_cohort_provenance(const Cohort& cohort, std::uint64_t spec_seed,
                                   const std::filesystem::path& path) {
  json j = json::object();
  j["site_id"] = cohort.site_id;
  j["spec_seed"] = spec_seed;
  j["effective_seed"] = cohort.seed;
  j["n_patients"] = cohort.records.size();
  std::size_t positives = 0;
  for (int y : cohort.labels) positives += static_cast<std::size_t>(y);
  j["positive_labels"] = positives;
  write_json_file(path, j);
}

// PopulationSpec JSON:
// {"site_id", "n_patients", "seed", "risk_bias",
//  "features": {id: {"mean", "std", "missing_rate"?}},   (all registry features)
//  "risk_weights": {id: w}}                               (sparse; missing = 0)
inline PopulationSpec load_population_spec(const std::filesystem::path& path,
                                           const FeatureRegistry& registry) {
  const json doc = parse_json_file(path);
  const std::string p = path.string();
  reject_unknown_keys(doc, {"site_id", "n_patients", "seed", "risk_bias", "features",
                            "risk_weights"}, p);
  PopulationSpec spec;
  spec.site_id = get_string(doc, "site_id", p);
  spec.n_patients = get_uint(doc, "n_patients", p);
  spec.seed = get_uint(doc, "seed", p);
  spec.risk_bias = get_double(doc, "risk_bias", p);
  spec.feature_ids = registry.feature_ids();
  spec.features.assign(registry.size(), {});
  spec.risk_weights.assign(registry.size(), 0.0);

  const json& features = get_object(doc, "features", p);
  std::vector<bool> covered(registry.size(), false);
  for (auto it = features.begin(); it != features.end(); ++it) {
    const auto idx = registry.index_of(it.key());
    if (!idx) throw UnknownFeature(it.key());
    const std::string fpath = p + ".features." + it.key();
    reject_unknown_keys(it.value(), {"mean", "std", "missing_rate"}, fpath);
    FeaturePopulation fp;
    fp.mean = get_double(it.value(), "mean", fpath);
    fp.std = get_double(it.value(), "std", fpath);
    fp.missing_rate = it.value().contains("missing_rate")
                          ? get_double(it.value(), "missing_rate", fpath)
                          : 0.0;
    spec.features[*idx] = fp;
    covered[*idx] = true;
  }
  for (std::size_t j = 0; j < registry.size(); ++j)
    if (!covered[j])
      throw SchemaError(p + ".features", "missing entry for '" + registry.at(j).id + "'");

  if (doc.contains("risk_weights")) {
    const json& rw = doc["risk_weights"];
    if (!rw.is_object()) throw SchemaError(p + ".risk_weights", "expected an object");
    for (auto it = rw.begin(); it != rw.end(); ++it) {
      const auto idx = registry.index_of(it.key());
      if (!idx) throw UnknownFeature(it.key());
      if (!it.value().is_number())
        throw SchemaError(p + ".risk_weights." + it.key(), "expected a number");
      spec.risk_weights[*idx] = it.value().get<double>();
    }
  }
  validate_spec(spec, registry);
  return spec;
}

}  // namespace fatl
