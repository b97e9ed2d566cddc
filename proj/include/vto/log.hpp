#pragma once

#include <sstream>
#include <string>

namespace vto::log {

enum class Level { debug, info, warn, error };

void write(Level level, const std::string& message);
void set_level(Level level);
/// Also append log lines to `path` (empty disables the file sink).
void set_file(const std::string& path);

template <typename... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

template <typename... Args>
void debug(const Args&... args) { write(Level::debug, cat(args...)); }
template <typename... Args>
void info(const Args&... args) { write(Level::info, cat(args...)); }
template <typename... Args>
void warn(const Args&... args) { write(Level::warn, cat(args...)); }
template <typename... Args>
void error(const Args&... args) { write(Level::error, cat(args...)); }

}  // namespace vto::log
