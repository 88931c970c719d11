#include "htnet/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace htnet::log {

namespace {

Level read_env_threshold() {
  const char* env = std::getenv("HTNET_LOG");
  if (env == nullptr) return Level::info;
  if (std::strcmp(env, "error") == 0) return Level::error;
  if (std::strcmp(env, "info") == 0) return Level::info;
  if (std::strcmp(env, "debug") == 0) return Level::debug;
  std::fprintf(stderr, "[htnet] unknown HTNET_LOG value '%s', using 'info'\n",
               env);
  return Level::info;
}

Level& threshold_ref() {
  static Level level = read_env_threshold();
  return level;
}

const char* tag(Level level) {
  switch (level) {
    case Level::error: return "error";
    case Level::debug: return "debug";
    default: return "info";
  }
}

}  // namespace

Level threshold() { return threshold_ref(); }

void set_threshold(Level level) { threshold_ref() = level; }

void write(Level level, const std::string& msg) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  std::fprintf(stderr, "[htnet %s] %s\n", tag(level), msg.c_str());
}

}  // namespace htnet::log
