#pragma once

#include <cstdlib>
#include <iostream>
#include <string>

#include "aida/error.hpp"

namespace aida {

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

// Level comes from AIDA_LOG_LEVEL in {error, info, debug}; defaults to info.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("AIDA_LOG_LEVEL");
    if (env == nullptr) return LogLevel::kInfo;
    const std::string v(env);
    if (v == "error") return LogLevel::kError;
    if (v == "info") return LogLevel::kInfo;
    if (v == "debug") return LogLevel::kDebug;
    throw ConfigError("AIDA_LOG_LEVEL must be error|info|debug, got '" + v + "'");
  }();
  return level;
}

inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) std::cout << msg << '\n';
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::kDebug) std::cout << "[debug] " << msg << '\n';
}

inline void log_error(const std::string& msg) { std::cerr << "error: " << msg << '\n'; }

}  // namespace aida
