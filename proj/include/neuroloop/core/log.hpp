#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>

namespace neuroloop::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

// Verbosity comes from NEUROLOOP_LOG (error|warn|info|debug); default warn.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("NEUROLOOP_LOG");
    if (!env) return Level::warn;
    const std::string_view v(env);
    if (v == "error") return Level::error;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    return Level::warn;
  }();
  return level;
}

inline void write(Level level, const std::string& msg) {
  if (level > threshold()) return;
  static std::mutex mu;
  static constexpr const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard lock(mu);
  std::cerr << "neuroloop[" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

template <typename... Args>
void warn(Args&&... args) { write(Level::warn, cat(std::forward<Args>(args)...)); }
template <typename... Args>
void info(Args&&... args) { write(Level::info, cat(std::forward<Args>(args)...)); }
template <typename... Args>
void debug(Args&&... args) { write(Level::debug, cat(std::forward<Args>(args)...)); }
template <typename... Args>
void error(Args&&... args) { write(Level::error, cat(std::forward<Args>(args)...)); }

}  // namespace neuroloop::log
