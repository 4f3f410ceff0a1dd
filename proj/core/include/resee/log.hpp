#pragma once

#include <string_view>

namespace resee::log {

enum class Level { kDebug, kInfo, kWarn, kError };

void set_level(Level level);
Level level();

/// Emits one `level=... module=... msg="..."` line on standard error.
void write(Level level, std::string_view module, std::string_view message);

inline void info(std::string_view module, std::string_view message) {
  write(Level::kInfo, module, message);
}
inline void warn(std::string_view module, std::string_view message) {
  write(Level::kWarn, module, message);
}
inline void debug(std::string_view module, std::string_view message) {
  write(Level::kDebug, module, message);
}

}  // namespace resee::log
