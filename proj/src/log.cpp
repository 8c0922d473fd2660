#include "pcdf/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace pcdf::log {
namespace {
std::atomic<Level> g_level{Level::info};
std::mutex g_mu;
}  // namespace

void set_level(Level level) { g_level = level; }

void write(Level level, std::string_view msg) {
  if (level < g_level.load()) return;
  static constexpr const char* kNames[] = {"debug", "info", "warn", "error"};
  std::lock_guard<std::mutex> lock(g_mu);
  std::cerr << "[" << kNames[static_cast<int>(level)] << "] " << msg << '\n';
}

}  // namespace pcdf::log
