#include "resee/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>
#include <string>

namespace resee::log {
namespace {

std::atomic<Level> g_level{Level::kInfo};
std::mutex g_mutex;

const char* name(Level level) {
  switch (level) {
    case Level::kDebug: return "debug";
    case Level::kInfo: return "info";
    case Level::kWarn: return "warn";
    case Level::kError: return "error";
  }
  return "info";
}

}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

void write(Level lvl, std::string_view module, std::string_view message) {
  if (lvl < g_level.load()) return;
  std::string escaped;
  escaped.reserve(message.size());
  for (char c : message) {
    if (c == '"' || c == '\\') escaped += '\\';
    escaped += (c == '\n') ? ' ' : c;
  }
  std::lock_guard lock(g_mutex);
  std::cerr << "level=" << name(lvl) << " module=" << module << " msg=\"" << escaped << "\"\n";
}

}  // namespace resee::log
