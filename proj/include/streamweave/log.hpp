#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace streamweave::log {

enum class Level { Off = 0, Error = 1, Warn = 2, Info = 3, Debug = 4 };

// STREAMWEAVE_LOG=error|warn|info|debug, read once. Defaults to warn.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("STREAMWEAVE_LOG");
    if (env == nullptr) return Level::Warn;
    const std::string_view v(env);
    if (v == "off") return Level::Off;
    if (v == "error") return Level::Error;
    if (v == "info") return Level::Info;
    if (v == "debug") return Level::Debug;
    return Level::Warn;
  }();
  return level;
}

inline void write(Level level, std::string_view msg) {
  if (level > threshold()) return;
  static std::mutex mu;
  static constexpr std::string_view names[] = {"", "error", "warn", "info", "debug"};
  std::lock_guard lock(mu);
  std::cerr << "[streamweave " << names[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void warn(std::string_view msg) { write(Level::Warn, msg); }
inline void info(std::string_view msg) { write(Level::Info, msg); }
inline void debug(std::string_view msg) { write(Level::Debug, msg); }

}  // namespace streamweave::log
