#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace agrocausal::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

/// Verbosity from AGROCAUSAL_LOG (error, warn, info, debug); warn by default.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("AGROCAUSAL_LOG");
    const std::string_view v = env ? env : "";
    if (v == "error") return Level::error;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    return Level::warn;
  }();
  return level;
}

inline void write(Level level, std::string_view message) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  static std::mutex mu;
  static constexpr const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard lock(mu);
  std::cerr << "[agrocausal " << names[static_cast<int>(level)] << "] " << message << '\n';
}

inline void error(std::string_view m) { write(Level::error, m); }
inline void warn(std::string_view m) { write(Level::warn, m); }
inline void info(std::string_view m) { write(Level::info, m); }
inline void debug(std::string_view m) { write(Level::debug, m); }

}  // namespace agrocausal::log
