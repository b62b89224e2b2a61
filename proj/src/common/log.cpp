#include "trackgpt/log.hpp"

#include <iostream>
#include <mutex>

namespace trackgpt::log {
namespace {

std::ostream* g_sink = &std::cerr;
Level g_level = Level::Info;
std::mutex g_mutex;

std::string_view tag(Level l) {
  switch (l) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warn";
    case Level::Error: return "error";
    case Level::Off: break;
  }
  return "";
}

}  // namespace

void set_sink(std::ostream* sink) {
  std::lock_guard lock(g_mutex);
  g_sink = sink;
}

void set_level(Level level) {
  std::lock_guard lock(g_mutex);
  g_level = level;
}

Level level() { return g_level; }

void write(Level level, std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (g_sink == nullptr || level < g_level) return;
  *g_sink << "[" << tag(level) << "] " << message << '\n';
}

}  // namespace trackgpt::log
