#include "fpr/log.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <iostream>
#include <mutex>

namespace fpr::log {
namespace {

Level parse_env() {
  const char* env = std::getenv("FPR_LOG_LEVEL");
  if (env == nullptr) return Level::kWarn;
  if (std::strcmp(env, "debug") == 0) return Level::kDebug;
  if (std::strcmp(env, "info") == 0) return Level::kInfo;
  if (std::strcmp(env, "error") == 0) return Level::kError;
  if (std::strcmp(env, "off") == 0) return Level::kOff;
  return Level::kWarn;
}

std::atomic<Level>& current() {
  static std::atomic<Level> level{parse_env()};
  return level;
}

constexpr const char* kNames[] = {"debug", "info", "warn", "error"};

}  // namespace

Level level() { return current().load(); }
void set_level(Level l) { current().store(l); }

void write(Level l, std::string_view message) {
  if (l < level() || l == Level::kOff) return;
  static std::mutex mutex;
  std::lock_guard lock(mutex);
  std::cerr << "[" << kNames[static_cast<int>(l)] << "] " << message << '\n';
}

}  // namespace fpr::log
