#include "rankssm/memtrack.hpp"

#include <algorithm>

namespace rankssm::memtrack {

namespace {
thread_local std::size_t g_current = 0;
thread_local std::size_t g_peak = 0;
}  // namespace

std::size_t current() noexcept { return g_current; }
std::size_t peak() noexcept { return g_peak; }
void reset_peak() noexcept { g_peak = g_current; }

namespace detail {

void add(std::size_t bytes) noexcept {
    g_current += bytes;
    g_peak = std::max(g_peak, g_current);
}

void sub(std::size_t bytes) noexcept {
    g_current -= std::min(bytes, g_current);
}

}  // namespace detail

}  // namespace rankssm::memtrack
