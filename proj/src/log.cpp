#include "qmcssa/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>

#include <fmt/format.h>

namespace qmcssa::log {

namespace {

std::atomic<Level> g_level{Level::warn};
std::mutex g_mutex;

void emit(Level at, std::string_view tag, std::string_view message)
{
    if (static_cast<int>(g_level.load()) < static_cast<int>(at))
        return;
    const std::lock_guard lock(g_mutex);
    fmt::print(stderr, "[{}] {}\n", tag, message);
}

} // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

void warn(std::string_view message) { emit(Level::warn, "warn", message); }
void info(std::string_view message) { emit(Level::info, "info", message); }
void debug(std::string_view message) { emit(Level::debug, "debug", message); }

} // namespace qmcssa::log
