#pragma once

#include <cstddef>
#include <memory>
#include <vector>

namespace rankssm::memtrack {

// Per-thread high-water allocation counter. Every tensor buffer and every
// large scratch buffer inside the scan kernels goes through TrackingAllocator,
// so peak() reports the peak number of live tracked bytes on this thread.
// The benchmark and the recompute-vs-store memory assertions read it.

std::size_t current() noexcept;
std::size_t peak() noexcept;
void reset_peak() noexcept;  // sets peak back to current

namespace detail {
void add(std::size_t bytes) noexcept;
void sub(std::size_t bytes) noexcept;
}  // namespace detail

}  // namespace rankssm::memtrack

namespace rankssm {

template <class T>
struct TrackingAllocator {
    using value_type = T;

    TrackingAllocator() = default;
    template <class U>
    TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        memtrack::detail::add(n * sizeof(T));
        return std::allocator<T>{}.allocate(n);
    }
    void deallocate(T* p, std::size_t n) noexcept {
        memtrack::detail::sub(n * sizeof(T));
        std::allocator<T>{}.deallocate(p, n);
    }

    template <class U>
    bool operator==(const TrackingAllocator<U>&) const noexcept {
        return true;
    }
};

// Storage for all tensor data, gradients and scan scratch space.
using Buffer = std::vector<double, TrackingAllocator<double>>;

}  // namespace rankssm
