#include "fpirl/log.hpp"

#include <iostream>
#include <mutex>

namespace fpirl {
namespace {

std::mutex g_mutex;
bool g_quiet = false;
WarningHandler g_handler;

}  // namespace

void warn(const std::string& message) {
  std::lock_guard lock(g_mutex);
  if (g_handler) {
    g_handler(message);
    return;
  }
  if (!g_quiet) std::cerr << "warning: " << message << '\n';
}

WarningHandler set_warning_handler(WarningHandler handler) {
  std::lock_guard lock(g_mutex);
  auto previous = std::move(g_handler);
  g_handler = std::move(handler);
  return previous;
}

void set_quiet(bool quiet) {
  std::lock_guard lock(g_mutex);
  g_quiet = quiet;
}

void info(const std::string& message) {
  std::lock_guard lock(g_mutex);
  if (!g_quiet) std::cerr << message << '\n';
}

}  // namespace fpirl
