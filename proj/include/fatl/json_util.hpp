#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fatl/errors.hpp"

// Strict JSON plumbing shared by every file loader: unknown keys are
// rejected and every schema error carries the path of the offending field.

namespace fatl {

using json = nlohmann::ordered_json;

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline json parse_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw SchemaError(path.string(), "not valid JSON");
  return j;
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

inline const json& require_key(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw SchemaError(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(key, "missing key (in " + path + ")");
  return *it;
}

inline void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                                const std::string& path) {
  if (!obj.is_object()) throw SchemaError(path, "expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* a : allowed)
      if (it.key() == a) { known = true; break; }
    if (!known) throw SchemaError(path + "." + it.key(), "unknown key");
  }
}

inline std::string get_string(const json& obj, const std::string& key, const std::string& path) {
  const json& v = require_key(obj, key, path);
  if (!v.is_string()) throw SchemaError(path + "." + key, "expected a string");
  return v.get<std::string>();
}

inline double get_double(const json& obj, const std::string& key, const std::string& path) {
  const json& v = require_key(obj, key, path);
  if (!v.is_number()) throw SchemaError(path + "." + key, "expected a number");
  return v.get<double>();
}

inline std::uint64_t get_uint(const json& obj, const std::string& key, const std::string& path) {
  const json& v = require_key(obj, key, path);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw SchemaError(path + "." + key, "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline bool get_bool(const json& obj, const std::string& key, const std::string& path) {
  const json& v = require_key(obj, key, path);
  if (!v.is_boolean()) throw SchemaError(path + "." + key, "expected a boolean");
  return v.get<bool>();
}

inline const json& get_array(const json& obj, const std::string& key, const std::string& path) {
  const json& v = require_key(obj, key, path);
  if (!v.is_array()) throw SchemaError(path + "." + key, "expected an array");
  return v;
}

inline const json& get_object(const json& obj, const std::string& key, const std::string& path) {
  const json& v = require_key(obj, key, path);
  if (!v.is_object()) throw SchemaError(path + "." + key, "expected an object");
  return v;
}

}  // namespace fatl
