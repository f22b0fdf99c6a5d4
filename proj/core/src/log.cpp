#include "provenance/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>

namespace provenance {

namespace {
std::atomic<LogLevel> g_level{LogLevel::info};
std::mutex g_mutex;
}  // namespace

void set_log_level(LogLevel level) noexcept { g_level = level; }
LogLevel log_level() noexcept { return g_level; }

void log_message(LogLevel level, std::string_view message) {
  static constexpr const char* kTags[] = {"debug", "info", "warn", "error"};
  if (level < g_level || level == LogLevel::quiet) return;
  std::lock_guard lock(g_mutex);
  fmt::print(stderr, "[{}] {}\n", kTags[static_cast<int>(level)], message);
}

}  // namespace provenance
