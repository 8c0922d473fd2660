#pragma once

#include <string_view>

namespace pcdf::log {

enum class Level { debug, info, warn, error };

void set_level(Level level);
void write(Level level, std::string_view msg);

inline void info(std::string_view msg) { write(Level::info, msg); }
inline void warn(std::string_view msg) { write(Level::warn, msg); }
inline void error(std::string_view msg) { write(Level::error, msg); }

}  // namespace pcdf::log
