#pragma once

#include <cstdlib>
#include <iostream>
#include <string>

// Minimal stderr logger controlled by FATL_LOG={error|info|debug}.

namespace fatl {

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("FATL_LOG");
    if (env == nullptr) return LogLevel::info;
    const std::string s(env);
    if (s == "error") return LogLevel::error;
    if (s == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

inline void log_error(const std::string& msg) { std::cerr << "[fatl] error: " << msg << "\n"; }

inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::cerr << "[fatl] " << msg << "\n";
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) std::cerr << "[fatl] debug: " << msg << "\n";
}

}  // namespace fatl
