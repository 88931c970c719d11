#pragma once

#include <cstdio>
#include <string>

namespace htnet::log {

enum class Level { error = 0, info = 1, debug = 2 };

// Level comes from HTNET_LOG (error|info|debug); defaults to info.
Level threshold();
void set_threshold(Level lv);

void write(Level lv, const std::string& msg);

inline void error(const std::string& msg) { write(Level::error, msg); }
inline void info(const std::string& msg) { write(Level::info, msg); }
inline void debug(const std::string& msg) { write(Level::debug, msg); }

}  // namespace htnet::log
