#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fatl/cohort.hpp"
#include "fatl/errors.hpp"
#include "fatl/importance.hpp"
#include "fatl/json_util.hpp"
#include "fatl/log.hpp"
#include "fatl/metrics.hpp"
#include "fatl/model.hpp"
#include "fatl/registry.hpp"
#include "fatl/rng.hpp"
#include "fatl/trainer.hpp"
#include "fatl/transfer.hpp"

// Pipeline stages, each reading and writing the on-disk formats, so a full
// run and the equivalent chain of standalone subcommands produce identical
// artifact trees:
//   simulate -> train-source -> filter -> transfer -> finetune -> evaluate -> report
// All randomness flows from the config seed list; nothing reads the clock or
// OS entropy.

namespace fatl {

namespace fs = std::filesystem;

inline constexpr const char* kConditionTargetOnly = "target_only";
inline constexpr const char* kConditionSingleBest = "single_best_source";
inline constexpr const char* kConditionUniformAverage = "uniform_average";
inline constexpr const char* kConditionFatl = "fatl";

struct PipelineConfig {
  fs::path config_dir;  // directory the config file lives in (for provenance)
  fs::path registry_path;
  fs::path profiles_path;
  std::vector<fs::path> population_specs;
  fs::path target_spec_path;
  std::uint64_t target_labeled_n = 0;  // 0 = zero-shot transfer evaluation
  TransferConfig transfer;
  TrainConfig train;  // anchor fields are filled per condition by the pipeline
  FilterPolicy filter_policy;
  std::optional<double> filter_binarize_threshold;
  ImputePolicy impute_policy = ImputePolicy::zero_after_standardize;
  std::vector<std::uint64_t> seeds;
  fs::path output_dir;
  bool trace = false;
};

// --------------------------------------------------------------------------
// Canonical artifact paths

inline std::string seed_prefix(std::uint64_t seed) { return "s" + std::to_string(seed) + "_"; }

struct ArtifactPaths {
  fs::path out;

  fs::path cohorts_dir() const { return out / "cohorts"; }
  fs::path models_dir() const { return out / "models"; }
  fs::path reports_dir() const { return out / "reports"; }
  fs::path traces_dir() const { return out / "traces"; }

  fs::path cohort_csv(std::uint64_t seed, const std::string& name) const {
    return cohorts_dir() / (seed_prefix(seed) + name + ".csv");
  }
  fs::path cohort_provenance(std::uint64_t seed, const std::string& name) const {
    return cohorts_dir() / (seed_prefix(seed) + name + ".provenance.json");
  }
  fs::path model_file(std::uint64_t seed, const std::string& name) const {
    return models_dir() / (seed_prefix(seed) + name + ".json");
  }
  fs::path filter_file() const { return reports_dir() / "filter.json"; }
  fs::path transfer_report(std::uint64_t seed) const {
    return reports_dir() / (seed_prefix(seed) + "transfer_report.json");
  }
  fs::path comparison_csv(std::uint64_t seed) const {
    return reports_dir() / (seed_prefix(seed) + "comparison.csv");
  }
  fs::path summary_csv() const { return reports_dir() / "summary.csv"; }
  fs::path summary_txt() const { return reports_dir() / "summary.txt"; }
  fs::path trace_csv(std::uint64_t seed, const std::string& name) const {
    return traces_dir() / (seed_prefix(seed) + name + ".csv");
  }
};

// --------------------------------------------------------------------------
// Config file

inline PipelineConfig load_pipeline_config(const fs::path& path) {
  const json doc = parse_json_file(path);
  const std::string p = path.string();
  reject_unknown_keys(doc,
                      {"registry_path", "profiles_path", "population_specs", "target_spec_path",
                       "target_labeled_n", "transfer", "train", "filter_policy", "filter_k",
                       "filter_q", "filter_binarize_threshold", "impute_policy", "seeds",
                       "output_dir", "trace"},
                      p);
  PipelineConfig cfg;
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  cfg.config_dir = base;
  auto resolve = [&](const std::string& rel) {
    fs::path candidate(rel);
    return candidate.is_absolute() ? candidate : base / candidate;
  };

  cfg.registry_path = resolve(get_string(doc, "registry_path", p));
  cfg.profiles_path = resolve(get_string(doc, "profiles_path", p));
  for (const auto& v : get_array(doc, "population_specs", p)) {
    if (!v.is_string()) throw SchemaError(p + ".population_specs", "expected strings");
    cfg.population_specs.push_back(resolve(v.get<std::string>()));
  }
  if (cfg.population_specs.empty())
    throw ConfigError("pipeline needs at least one source population spec");
  cfg.target_spec_path = resolve(get_string(doc, "target_spec_path", p));
  cfg.target_labeled_n = get_uint(doc, "target_labeled_n", p);

  {
    std::vector<fs::path> all = cfg.population_specs;
    all.push_back(cfg.registry_path);
    all.push_back(cfg.profiles_path);
    all.push_back(cfg.target_spec_path);
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end())
      throw ConfigError("input paths in the pipeline config must be distinct");
  }

  const json& tr = get_object(doc, "transfer", p);
  reject_unknown_keys(tr, {"alpha_policy", "explicit_alphas", "lambda", "bias_prior",
                           "bias_prior_value"}, p + ".transfer");
  cfg.transfer.alpha_policy =
      alpha_policy_from_string(get_string(tr, "alpha_policy", p + ".transfer"),
                               p + ".transfer.alpha_policy");
  if (tr.contains("explicit_alphas"))
    for (const auto& v : get_array(tr, "explicit_alphas", p + ".transfer"))
      cfg.transfer.explicit_alphas.push_back(v.get<double>());
  cfg.transfer.lambda = get_double(tr, "lambda", p + ".transfer");
  if (cfg.transfer.lambda < 0.0)
    throw ConfigError("transfer.lambda must be non-negative");
  cfg.transfer.bias_prior = bias_prior_from_string(
      get_string(tr, "bias_prior", p + ".transfer"), p + ".transfer.bias_prior");
  if (tr.contains("bias_prior_value"))
    cfg.transfer.bias_prior_value = get_double(tr, "bias_prior_value", p + ".transfer");

  const json& train = get_object(doc, "train", p);
  reject_unknown_keys(train, {"learning_rate", "epochs", "l2_weight", "convergence_tol",
                              "seed"}, p + ".train");
  cfg.train.learning_rate = get_double(train, "learning_rate", p + ".train");
  cfg.train.epochs = static_cast<std::uint32_t>(get_uint(train, "epochs", p + ".train"));
  cfg.train.l2_weight = get_double(train, "l2_weight", p + ".train");
  if (train.contains("convergence_tol"))
    cfg.train.convergence_tol = get_double(train, "convergence_tol", p + ".train");
  if (train.contains("seed")) cfg.train.seed = get_uint(train, "seed", p + ".train");

  const std::string policy = get_string(doc, "filter_policy", p);
  if (policy == "frequency") {
    cfg.filter_policy = FilterPolicy::frequency();
  } else if (policy == "mean_normalized") {
    cfg.filter_policy = FilterPolicy::mean_normalized();
  } else if (policy == "top_k_binary") {
    const int k = static_cast<int>(get_uint(doc, "filter_k", p));
    const double q = get_double(doc, "filter_q", p);
    cfg.filter_policy = FilterPolicy::top_k_binary(k, q);
  } else {
    throw SchemaError(p + ".filter_policy",
                      "must be frequency, mean_normalized or top_k_binary");
  }
  if (doc.contains("filter_binarize_threshold"))
    cfg.filter_binarize_threshold = get_double(doc, "filter_binarize_threshold", p);
  if (doc.contains("impute_policy"))
    cfg.impute_policy = impute_policy_from_string(get_string(doc, "impute_policy", p),
                                                  p + ".impute_policy");

  for (const auto& v : get_array(doc, "seeds", p)) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw SchemaError(p + ".seeds", "seeds must be non-negative integers");
    cfg.seeds.push_back(v.get<std::uint64_t>());
  }
  if (cfg.seeds.empty()) throw ConfigError("pipeline config needs at least one seed");
  cfg.output_dir = resolve(get_string(doc, "output_dir", p));
  if (doc.contains("trace")) cfg.trace = get_bool(doc, "trace", p);
  return cfg;
}

// --------------------------------------------------------------------------
// Shared stage helpers

namespace detail {

inline FeatureRegistry load_registry(const PipelineConfig& cfg) {
  return load_registry_file(cfg.registry_path).registry;
}

inline std::uint64_t cohort_seed(std::uint64_t pipeline_seed, const PopulationSpec& spec) {
  return derive_seed(mix_seeds(pipeline_seed, spec.seed), spec.site_id);
}

inline void check_site_id(const PopulationSpec& spec) {
  if (!is_snake_case_id(spec.site_id))
    throw ConfigError("site_id '" + spec.site_id + "' must be lowercase snake_case");
}

inline std::string source_model_name(const std::string& site_id) { return "source_" + site_id; }

inline void write_trace_csv(const TrainTrace& trace, const fs::path& path) {
  std::string text = "epoch,loss\n";
  text += "0," + format_double(trace.initial_loss) + "\n";
  for (std::size_t i = 0; i < trace.losses.size(); ++i)
    text += std::to_string(i + 1) + "," + format_double(trace.losses[i]) + "\n";
  write_text_file(path, text);
}

inline DataMatrix build_design_matrix(std::span<const CanonicalRecord> records,
                                      const FeatureStats& stats, ImputePolicy policy,
                                      const FeatureRegistry& registry) {
  DataMatrix x(records.size(), registry.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::vector<double> row = impute(records[i], policy, stats, registry);
    std::copy(row.begin(), row.end(), x.values.begin() + i * x.cols);
  }
  return x;
}

inline std::vector<double> training_scores(const DataMatrix& x,
                                           std::span<const double> weights, double bias) {
  std::vector<double> scores;
  scores.reserve(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    scores.push_back(predict_proba(weights, bias, x.row(i)));
  return scores;
}

// Alpha-weighted pooling of source standardization stats over the sources
// covering each feature; features no source covers fall back to (0, 1).
// Used only for zero-shot models, which never see target training data.
inline FeatureStats pooled_source_stats(std::span<const LogisticModel> sources,
                                        std::span<const double> alphas,
                                        const FeatureRegistry& registry) {
  const std::size_t m = registry.size();
  FeatureStats stats;
  stats.means.assign(m, 0.0);
  stats.stds.assign(m, 1.0);
  std::vector<double> mass(m, 0.0);
  std::vector<double> mean_acc(m, 0.0), std_acc(m, 0.0);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto& src = sources[i];
    for (std::size_t k = 0; k < src.feature_ids.size(); ++k) {
      const auto idx = registry.index_of(src.feature_ids[k]);
      if (!idx) throw AlignmentError(src.feature_ids[k]);
      mass[*idx] += alphas[i];
      mean_acc[*idx] += alphas[i] * src.standardization.means[k];
      std_acc[*idx] += alphas[i] * src.standardization.stds[k];
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (mass[j] > 0.0) {
      stats.means[j] = mean_acc[j] / mass[j];
      stats.stds[j] = std_acc[j] / mass[j];
    }
  }
  return stats;
}

inline std::vector<LogisticModel> load_source_models(const PipelineConfig& cfg,
                                                     const ArtifactPaths& paths,
                                                     std::uint64_t seed,
                                                     const FeatureRegistry& registry) {
  std::vector<LogisticModel> sources;
  for (const auto& spec_path : cfg.population_specs) {
    const PopulationSpec spec = load_population_spec(spec_path, registry);
    sources.push_back(load_model(paths.model_file(seed, source_model_name(spec.site_id))));
  }
  return sources;
}

inline FeatureFilter load_filter_file(const fs::path& path, const FeatureRegistry& registry) {
  const json doc = parse_json_file(path);
  const std::string p = path.string();
  reject_unknown_keys(doc, {"policy_tag", "feature_ids", "values"}, p);
  FeatureFilter filter;
  filter.policy_tag = get_string(doc, "policy_tag", p);
  const json& ids = get_array(doc, "feature_ids", p);
  const json& values = get_array(doc, "values", p);
  if (ids.size() != registry.size() || values.size() != registry.size())
    throw SchemaError(p, "filter length does not match the registry");
  for (std::size_t j = 0; j < registry.size(); ++j) {
    if (ids[j].get<std::string>() != registry.at(j).id)
      throw SchemaError(p + ".feature_ids", "order does not match the registry");
    filter.values.push_back(values[j].get<double>());
  }
  return filter;
}

inline std::string format_vector(std::span<const double> v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i != 0) s += ", ";
    s += format_double(v[i]);
  }
  return s + "]";
}

}  // namespace detail

// --------------------------------------------------------------------------
// Stage: simulate

inline void stage_simulate(const PipelineConfig& cfg, std::uint64_t seed) {
  const FeatureRegistry registry = detail::load_registry(cfg);
  ArtifactPaths paths{cfg.output_dir};
  fs::create_directories(paths.cohorts_dir());

  std::vector<std::string> seen_sites;
  for (const auto& spec_path : cfg.population_specs) {
    PopulationSpec spec = load_population_spec(spec_path, registry);
    detail::check_site_id(spec);
    if (std::find(seen_sites.begin(), seen_sites.end(), spec.site_id) != seen_sites.end())
      throw ConfigError("duplicate site_id '" + spec.site_id + "' across population specs");
    seen_sites.push_back(spec.site_id);
    const std::uint64_t requested = spec.seed;
    spec.seed = detail::cohort_seed(seed, spec);
    const Cohort cohort = generate_cohort(spec, registry);
    save_cohort_csv(cohort, registry, paths.cohort_csv(seed, spec.site_id));
    save_cohort_provenance(cohort, requested, paths.cohort_provenance(seed, spec.site_id));
    log_debug("simulated " + spec.site_id + " (" + std::to_string(cohort.records.size()) +
              " patients)");
  }

  PopulationSpec target = load_population_spec(cfg.target_spec_path, registry);
  detail::check_site_id(target);
  if (std::find(seen_sites.begin(), seen_sites.end(), target.site_id) != seen_sites.end())
    throw ConfigError("target site_id '" + target.site_id + "' collides with a source site");
  if (cfg.target_labeled_n > target.n_patients)
    throw ConfigError("target_labeled_n exceeds the target spec's n_patients");
  const std::uint64_t requested = target.seed;
  const std::uint64_t split_seed = derive_seed(mix_seeds(seed, requested), "target_split");
  target.seed = detail::cohort_seed(seed, target);
  const Cohort cohort = generate_cohort(target, registry);

  // Labeled/held-out split from a named sub-seed (Fisher-Yates permutation).
  const std::size_t n = cohort.records.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n - 1, step = 0; i > 0; --i, ++step) {
    const std::size_t j = static_cast<std::size_t>(counter_value(split_seed, step) % (i + 1));
    std::swap(perm[i], perm[j]);
  }
  auto take = [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(perm.begin() + begin, perm.begin() + end);
    std::sort(idx.begin(), idx.end());
    Cohort part;
    part.site_id = cohort.site_id;
    part.seed = cohort.seed;
    for (std::size_t i : idx) {
      part.records.push_back(cohort.records[i]);
      part.labels.push_back(cohort.labels[i]);
    }
    return part;
  };
  const Cohort labeled = take(0, cfg.target_labeled_n);
  const Cohort heldout = take(cfg.target_labeled_n, n);
  save_cohort_csv(labeled, registry, paths.cohort_csv(seed, "target_labeled"));
  save_cohort_provenance(labeled, requested, paths.cohort_provenance(seed, "target_labeled"));
  save_cohort_csv(heldout, registry, paths.cohort_csv(seed, "target_heldout"));
  save_cohort_provenance(heldout, requested, paths.cohort_provenance(seed, "target_heldout"));
  log_info("seed " + std::to_string(seed) + ": simulated " +
           std::to_string(cfg.population_specs.size()) + " source cohorts + target (" +
           std::to_string(labeled.records.size()) + " labeled / " +
           std::to_string(heldout.records.size()) + " held out)");
}

// --------------------------------------------------------------------------
// Stage: train-source

inline void stage_train_sources(const PipelineConfig& cfg, std::uint64_t seed) {
  const FeatureRegistry registry = detail::load_registry(cfg);
  ArtifactPaths paths{cfg.output_dir};
  fs::create_directories(paths.models_dir());
  if (cfg.trace) fs::create_directories(paths.traces_dir());

  for (const auto& spec_path : cfg.population_specs) {
    const PopulationSpec spec = load_population_spec(spec_path, registry);
    const Cohort cohort = load_cohort_csv(paths.cohort_csv(seed, spec.site_id), registry);
    const FeatureStats stats = compute_stats(cohort.records, registry);
    const DataMatrix x =
        detail::build_design_matrix(cohort.records, stats, cfg.impute_policy, registry);

    TrainConfig train = cfg.train;
    train.bias_anchor_lambda = 0.0;
    train.bias_anchor_value = 0.0;
    train.seed = derive_seed(seed, "train_" + spec.site_id);
    const std::vector<double> zero_init(registry.size(), 0.0);
    const TrainResult fit = train_logistic(x, cohort.labels, zero_init, 0.0, train);

    LogisticModel model;
    model.model_id = detail::source_model_name(spec.site_id);
    model.feature_ids = registry.feature_ids();
    model.weights = fit.weights;
    model.bias = fit.bias;
    model.standardization = stats;
    model.meta.cohort_size = cohort.records.size();
    model.meta.population_tag = spec.site_id;
    const double train_auroc =
        auroc(detail::training_scores(x, fit.weights, fit.bias), cohort.labels);
    if (train_auroc >= 0.5) model.meta.reported_auroc = train_auroc;
    else log_info("source " + spec.site_id + " trained below chance; omitting reported_auroc");

    save_model(model, paths.model_file(seed, model.model_id));
    if (cfg.trace) dtrace_write(fit.trace, paths.trace_csv(seed, model.model_id));
    log_info("seed " + std::to_string(seed) + ": trained " + model.model_id + " (auroc " +
             format_double(train_auroc) + ", " + std::to_string(fit.trace.epochs_run) +
             " epochs)");
  }
}

// --------------------------------------------------------------------------
// Stage: filter

inline void stage_filter(const PipelineConfig& cfg) {
  const FeatureRegistry registry = detail::load_registry(cfg);
  ArtifactPaths paths{cfg.output_dir};
  fs::create_directories(paths.reports_dir());
  const std::vector<ImportanceProfile> profiles =
      load_profiles_file(cfg.profiles_path, registry);
  FeatureFilter filter = compute_filter(profiles, registry, cfg.filter_policy);
  if (cfg.filter_binarize_threshold)
    filter = binarize(filter, *cfg.filter_binarize_threshold);

  json j = json::object();
  j["policy_tag"] = filter.policy_tag;
  j["feature_ids"] = registry.feature_ids();
  j["values"] = filter.values;
  write_json_file(paths.filter_file(), j);
  log_info("filter (" + filter.policy_tag + "): F = " + detail::format_vector(filter.values));
}

// --------------------------------------------------------------------------
// Stage: transfer

inline void stage_transfer(const PipelineConfig& cfg, std::uint64_t seed) {
  const FeatureRegistry registry = detail::load_registry(cfg);
  ArtifactPaths paths{cfg.output_dir};
  fs::create_directories(paths.reports_dir());

  const std::vector<LogisticModel> sources =
      detail::load_source_models(cfg, paths, seed, registry);
  const FeatureFilter filter = detail::load_filter_file(paths.filter_file(), registry);

  std::vector<AlignedModel> aligned;
  std::vector<std::string> ids;
  for (const auto& src : sources) {
    aligned.push_back(align(src, registry));
    ids.push_back(src.model_id);
  }
  const std::vector<double> alphas = compute_alphas(sources, cfg.transfer);
  const InitializedTarget init = fatl_init(aligned, alphas, filter, cfg.transfer, ids);

  json j = json::object();
  j["format_version"] = 1;
  j["seed"] = seed;
  j["source_model_ids"] = ids;
  j["alpha_policy"] = to_string(cfg.transfer.alpha_policy);
  j["alphas"] = init.provenance.alphas;
  j["lambda"] = cfg.transfer.lambda;
  j["bias_prior"] = to_string(cfg.transfer.bias_prior);
  if (cfg.transfer.bias_prior == BiasPrior::explicit_value)
    j["bias_prior_value"] = cfg.transfer.bias_prior_value;
  j["filter_policy_tag"] = filter.policy_tag;
  j["feature_ids"] = registry.feature_ids();
  j["filter_values"] = filter.values;
  j["source_bias_mean"] = init.provenance.source_bias_mean;
  j["initial_weights"] = init.weights;
  j["initial_bias"] = init.bias;
  write_json_file(paths.transfer_report(seed), j);

  log_info("seed " + std::to_string(seed) + ": transfer alphas = " +
           detail::format_vector(alphas) + ", F = " + detail::format_vector(filter.values) +
           ", source bias mean = " + format_double(init.provenance.source_bias_mean));
}

// --------------------------------------------------------------------------
// Stage: finetune

inline void stage_finetune(const PipelineConfig& cfg, std::uint64_t seed) {
  const FeatureRegistry registry = detail::load_registry(cfg);
  ArtifactPaths paths{cfg.output_dir};
  fs::create_directories(paths.models_dir());
  if (cfg.trace) fs::create_directories(paths.traces_dir());

  const std::vector<LogisticModel> sources =
      detail::load_source_models(cfg, paths, seed, registry);
  std::vector<AlignedModel> aligned;
  for (const auto& src : sources) aligned.push_back(align(src, registry));

  // Configured transfer initialization, exactly as reported.
  const json report = parse_json_file(paths.transfer_report(seed));
  std::vector<double> fatl_weights;
  for (const auto& v : get_array(report, "initial_weights", "transfer_report"))
    fatl_weights.push_back(v.get<double>());
  const double fatl_bias = get_double(report, "initial_bias", "transfer_report");
  const double bias_mean = get_double(report, "source_bias_mean", "transfer_report");
  std::vector<double> fatl_alphas;
  for (const auto& v : get_array(report, "alphas", "transfer_report"))
    fatl_alphas.push_back(v.get<double>());

  // Plain-average baseline: uniform alphas, no filter, bias at the source mean.
  TransferConfig uniform_cfg;
  uniform_cfg.alpha_policy = AlphaPolicy::uniform;
  uniform_cfg.lambda = 0.0;
  uniform_cfg.bias_prior = BiasPrior::source_mean;
  const std::vector<double> uniform_alphas = compute_alphas(sources, uniform_cfg);
  FeatureFilter pass_all;
  pass_all.values.assign(registry.size(), 1.0);
  pass_all.policy_tag = "none";
  const InitializedTarget uniform_init =
      fatl_init(aligned, uniform_alphas, pass_all, uniform_cfg);

  std::uint64_t total_source_cohort = 0;
  for (const auto& src : sources) total_source_cohort += src.meta.cohort_size;

  if (cfg.target_labeled_n == 0) {
    // Zero-shot: materialize the initialized models directly; no training.
    auto make = [&](const std::string& tag, const std::vector<double>& w, double b,
                    std::span<const double> alphas) {
      LogisticModel model;
      model.model_id = tag;
      model.feature_ids = registry.feature_ids();
      model.weights = w;
      model.bias = b;
      model.standardization = detail::pooled_source_stats(sources, alphas, registry);
      model.meta.cohort_size = total_source_cohort;
      model.meta.population_tag = "transfer";
      save_model(model, paths.model_file(seed, tag));
    };
    make(kConditionUniformAverage, uniform_init.weights, uniform_init.bias, uniform_alphas);
    make(kConditionFatl, fatl_weights, fatl_bias, fatl_alphas);
    log_info("seed " + std::to_string(seed) + ": zero-shot mode, initialized models saved");
    return;
  }

  const Cohort labeled = load_cohort_csv(paths.cohort_csv(seed, "target_labeled"), registry);
  const FeatureStats stats = compute_stats(labeled.records, registry);
  const DataMatrix x =
      detail::build_design_matrix(labeled.records, stats, cfg.impute_policy, registry);

  auto finetune = [&](const std::string& tag, std::span<const double> w0, double b0,
                      double anchor_lambda, double anchor_value) {
    TrainConfig train = cfg.train;
    train.bias_anchor_lambda = anchor_lambda;
    train.bias_anchor_value = anchor_value;
    train.seed = derive_seed(seed, "train_" + tag);
    const TrainResult fit = train_logistic(x, labeled.labels, w0, b0, train);
    LogisticModel model;
    model.model_id = tag;
    model.feature_ids = registry.feature_ids();
    model.weights = fit.weights;
    model.bias = fit.bias;
    model.standardization = stats;
    model.meta.cohort_size = labeled.records.size();
    model.meta.population_tag = labeled.site_id;
    save_model(model, paths.model_file(seed, tag));
    if (cfg.trace) dtrace_write(fit.trace, paths.trace_csv(seed, tag));
    log_info("seed " + std::to_string(seed) + ": " + tag + " fine-tuned (" +
             std::to_string(fit.trace.epochs_run) + " epochs, final loss " +
             format_double(fit.trace.losses.empty() ? fit.trace.initial_loss
                                                    : fit.trace.losses.back()) +
             ")");
  };

  const std::vector<double> zero_init(registry.size(), 0.0);
  finetune(kConditionTargetOnly, zero_init, 0.0, 0.0, 0.0);
  finetune(kConditionUniformAverage, uniform_init.weights, uniform_init.bias, 0.0, 0.0);
  finetune(kConditionFatl, fatl_weights, fatl_bias, cfg.transfer.lambda, bias_mean);
}

// --------------------------------------------------------------------------
// Stage: evaluate

inline void stage_evaluate(const PipelineConfig& cfg, std::uint64_t seed) {
  const FeatureRegistry registry = detail::load_registry(cfg);
  ArtifactPaths paths{cfg.output_dir};
  fs::create_directories(paths.reports_dir());

  const Cohort heldout = load_cohort_csv(paths.cohort_csv(seed, "target_heldout"), registry);
  const std::vector<LogisticModel> sources =
      detail::load_source_models(cfg, paths, seed, registry);

  // Best source by reported training AUROC; ties break toward the smaller id.
  const LogisticModel* best = nullptr;
  double best_score = -1.0;
  for (const auto& src : sources) {
    const double score = src.meta.reported_auroc.value_or(0.5);
    if (score > best_score || (score == best_score && best && src.model_id < best->model_id)) {
      best = &src;
      best_score = score;
    }
  }

  std::vector<Condition> conditions;
  if (cfg.target_labeled_n > 0)
    conditions.push_back(
        {kConditionTargetOnly, load_model(paths.model_file(seed, kConditionTargetOnly))});
  conditions.push_back({kConditionSingleBest, *best});
  conditions.push_back(
      {kConditionUniformAverage, load_model(paths.model_file(seed, kConditionUniformAverage))});
  conditions.push_back({kConditionFatl, load_model(paths.model_file(seed, kConditionFatl))});

  std::vector<EvalReport> reports = compare_conditions(
      heldout.records, heldout.labels, conditions, registry, cfg.impute_policy, 0.5);
  for (auto& r : reports)
    if (r.condition_tag == kConditionSingleBest) r.detail = best->model_id;

  std::string csv =
      "condition,auroc,brier,sensitivity,specificity,threshold,"
      "youden_threshold,youden_sensitivity,youden_specificity,n_pos,n_neg,detail\n";
  for (const auto& r : reports) {
    csv += r.condition_tag + ',' + format_double(r.auroc) + ',' + format_double(r.brier) + ',' +
           format_double(r.sensitivity) + ',' + format_double(r.specificity) + ',' +
           format_double(r.threshold) + ',' + format_double(r.youden.threshold) + ',' +
           format_double(r.youden.sensitivity) + ',' + format_double(r.youden.specificity) +
           ',' + std::to_string(r.n_pos) + ',' + std::to_string(r.n_neg) + ',' + r.detail +
           '\n';
  }
  write_text_file(paths.comparison_csv(seed), csv);
  for (const auto& r : reports)
    log_info("seed " + std::to_string(seed) + ": " + r.condition_tag + " auroc " +
             format_double(r.auroc) + " brier " + format_double(r.brier));
}

// --------------------------------------------------------------------------
// Stage: report

namespace detail {

struct ConditionAggregate {
  std::vector<double> auroc, brier, sensitivity, specificity;
};

struct SummaryRow {
  std::string condition;
  std::size_t n_seeds = 0;
  double auroc_mean = 0, auroc_std = 0;
  double brier_mean = 0, brier_std = 0;
  double sensitivity_mean = 0, sensitivity_std = 0;
  double specificity_mean = 0, specificity_std = 0;
};

inline std::pair<double, double> mean_and_sample_std(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      cells.emplace_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return cells;
}

}  // namespace detail

inline void stage_report(const PipelineConfig& cfg) {
  ArtifactPaths paths{cfg.output_dir};
  fs::create_directories(paths.reports_dir());

  std::vector<std::string> order;  // condition order as first encountered
  std::map<std::string, detail::ConditionAggregate> agg;
  for (const std::uint64_t seed : cfg.seeds) {
    const std::string text = read_text_file(paths.comparison_csv(seed));
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = detail::split_csv_line(line);
      if (cells.size() < 12)
        throw SchemaError(paths.comparison_csv(seed).string(), "short comparison row");
      const std::string& condition = cells[0];
      if (agg.find(condition) == agg.end()) order.push_back(condition);
      auto& a = agg[condition];
      a.auroc.push_back(std::stod(cells[1]));
      a.brier.push_back(std::stod(cells[2]));
      a.sensitivity.push_back(std::stod(cells[3]));
      a.specificity.push_back(std::stod(cells[4]));
    }
  }

  std::vector<detail::SummaryRow> rows;
  for (const auto& condition : order) {
    const auto& a = agg[condition];
    detail::SummaryRow row;
    row.condition = condition;
    row.n_seeds = a.auroc.size();
    std::tie(row.auroc_mean, row.auroc_std) = detail::mean_and_sample_std(a.auroc);
    std::tie(row.brier_mean, row.brier_std) = detail::mean_and_sample_std(a.brier);
    std::tie(row.sensitivity_mean, row.sensitivity_std) =
        detail::mean_and_sample_std(a.sensitivity);
    std::tie(row.specificity_mean, row.specificity_std) =
        detail::mean_and_sample_std(a.specificity);
    rows.push_back(row);
  }

  std::string csv =
      "condition,n_seeds,auroc_mean,auroc_std,brier_mean,brier_std,"
      "sensitivity_mean,sensitivity_std,specificity_mean,specificity_std\n";
  for (const auto& r : rows) {
    csv += r.condition + ',' + std::to_string(r.n_seeds) + ',' + format_double(r.auroc_mean) +
           ',' + format_double(r.auroc_std) + ',' + format_double(r.brier_mean) + ',' +
           format_double(r.brier_std) + ',' + format_double(r.sensitivity_mean) + ',' +
           format_double(r.sensitivity_std) + ',' + format_double(r.specificity_mean) + ',' +
           format_double(r.specificity_std) + '\n';
  }
  write_text_file(paths.summary_csv(), csv);

  // Plain-text table plus the directional ordering checks. Results are
  // synthetic-cohort numbers, labeled as such.
  auto find_row = [&](const char* tag) -> const detail::SummaryRow* {
    for (const auto& r : rows)
      if (r.condition == tag) return &r;
    return nullptr;
  };
  std::ostringstream txt;
  txt << "condition            seeds  auroc (mean +- std)      brier (mean +- std)\n";
  for (const auto& r : rows) {
    std::string name = r.condition;
    name.resize(20, ' ');
    txt << name << ' ' << r.n_seeds << "      " << format_double(r.auroc_mean) << " +- "
        << format_double(r.auroc_std) << "    " << format_double(r.brier_mean) << " +- "
        << format_double(r.brier_std) << "\n";
  }
  txt << "note: synthetic cohorts; values describe this run, not clinical performance\n";
  const detail::SummaryRow* fatl_row = find_row(kConditionFatl);
  auto ordering_line = [&](const char* other_tag) {
    const detail::SummaryRow* other = find_row(other_tag);
    if (fatl_row == nullptr || other == nullptr) return;
    const bool ok = fatl_row->auroc_mean >= other->auroc_mean;
    txt << "ordering fatl >= " << other_tag << " (mean auroc): "
        << (ok ? "OK" : "INVERSION") << " (" << format_double(fatl_row->auroc_mean)
        << (ok ? " >= " : " < ") << format_double(other->auroc_mean) << ")\n";
  };
  ordering_line(kConditionUniformAverage);
  ordering_line(kConditionTargetOnly);
  write_text_file(paths.summary_txt(), txt.str());
  log_info("summary written to " + paths.summary_csv().string());
}

// --------------------------------------------------------------------------
// Full pipeline

inline int run_pipeline(const PipelineConfig& cfg) {
  const auto guarded = [&](const char* stage, const std::function<void()>& body) {
    try {
      body();
      return true;
    } catch (const std::exception& e) {
      log_error(std::string("stage ") + stage + ": " + e.what());
      return false;
    }
  };

  for (const std::uint64_t seed : cfg.seeds)
    if (!guarded("simulate", [&] { stage_simulate(cfg, seed); })) return 1;
  for (const std::uint64_t seed : cfg.seeds)
    if (!guarded("train-source", [&] { stage_train_sources(cfg, seed); })) return 1;
  if (!guarded("filter", [&] { stage_filter(cfg); })) return 1;
  for (const std::uint64_t seed : cfg.seeds)
    if (!guarded("transfer", [&] { stage_transfer(cfg, seed); })) return 1;
  for (const std::uint64_t seed : cfg.seeds)
    if (!guarded("finetune", [&] { stage_finetune(cfg, seed); })) return 1;
  for (const std::uint64_t seed : cfg.seeds)
    if (!guarded("evaluate", [&] { stage_evaluate(cfg, seed); })) return 1;
  if (!guarded("report", [&] { stage_report(cfg); })) return 1;
  return 0;
}

}  // namespace fatl
