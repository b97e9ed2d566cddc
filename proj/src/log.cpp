#include "vto/log.hpp"

#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <memory>
#include <mutex>

namespace vto::log {

namespace {

std::mutex g_mutex;

std::shared_ptr<spdlog::logger>& logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto l = std::make_shared<spdlog::logger>("vto", std::make_shared<spdlog::sinks::stderr_color_sink_mt>());
    l->set_level(spdlog::level::info);
    return l;
  }();
  return instance;
}

spdlog::level::level_enum convert(Level level) {
  switch (level) {
    case Level::debug: return spdlog::level::debug;
    case Level::info: return spdlog::level::info;
    case Level::warn: return spdlog::level::warn;
    case Level::error: return spdlog::level::err;
  }
  return spdlog::level::info;
}

}  // namespace

void write(Level level, const std::string& message) {
  std::lock_guard lock(g_mutex);
  logger()->log(convert(level), "{}", message);
}

void set_level(Level level) {
  std::lock_guard lock(g_mutex);
  logger()->set_level(convert(level));
}

void set_file(const std::string& path) {
  std::lock_guard lock(g_mutex);
  auto& l = logger();
  auto level = l->level();
  std::vector<spdlog::sink_ptr> sinks{std::make_shared<spdlog::sinks::stderr_color_sink_mt>()};
  if (!path.empty()) sinks.push_back(std::make_shared<spdlog::sinks::basic_file_sink_mt>(path, false));
  l = std::make_shared<spdlog::logger>("vto", sinks.begin(), sinks.end());
  l->set_level(level);
}

}  // namespace vto::log
