#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fatl {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct DuplicateFeature : Error {
  explicit DuplicateFeature(const std::string& id)
      : Error("duplicate feature id '" + id + "'"), feature_id(id) {}
  std::string feature_id;
};

struct EmptyRegistry : Error {
  EmptyRegistry() : Error("registry requires at least one feature") {}
};

struct UnknownFeature : Error {
  explicit UnknownFeature(const std::string& id)
      : Error("unknown feature id '" + id + "'"), feature_id(id) {}
  std::string feature_id;
};

struct DuplicateAlias : Error {
  explicit DuplicateAlias(const std::string& alias)
      : Error("duplicate harmonization alias '" + alias + "'"), alias(alias) {}
  std::string alias;
};

// Two observed raw fields map onto the same canonical feature.
struct AmbiguousMapping : Error {
  AmbiguousMapping(const std::string& target, const std::string& a, const std::string& b)
      : Error("aliases '" + a + "' and '" + b + "' both map to '" + target + "' in one record"),
        target_id(target) {}
  std::string target_id;
};

struct DegenerateFeature : Error {
  explicit DegenerateFeature(const std::string& id)
      : Error("feature '" + id + "' has a degenerate (zero or missing) standard deviation"),
        feature_id(id) {}
  std::string feature_id;
};

struct AlignmentError : Error {
  explicit AlignmentError(const std::string& id)
      : Error("model feature '" + id + "' is not in the registry"), feature_id(id) {}
  std::string feature_id;
};

// File content violates a schema; `path` points at the offending field.
struct SchemaError : Error {
  SchemaError(const std::string& path, const std::string& detail)
      : Error("schema violation at '" + path + "': " + detail), field_path(path) {}
  std::string field_path;
};

struct PolicyError : Error {
  explicit PolicyError(const std::string& what) : Error(what) {}
};

struct TrainError : Error {
  explicit TrainError(const std::string& what) : Error(what) {}
};

struct DivergenceError : Error {
  explicit DivergenceError(std::size_t epoch)
      : Error("training loss became non-finite at epoch " + std::to_string(epoch)),
        epoch(epoch) {}
  std::size_t epoch;
};

struct MetricError : Error {
  explicit MetricError(const std::string& what) : Error(what) {}
};

struct CohortError : Error {
  explicit CohortError(const std::string& what) : Error(what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(what) {}
};

}  // namespace fatl
