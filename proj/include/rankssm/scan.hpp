#pragma once

#include <cstddef>

#include "rankssm/memtrack.hpp"

namespace rankssm {

// Element of the affine-composition monoid behind the linear recurrence
// h_t = a_t * h_{t-1} + b_t. Applying (a2,b2) after (a1,b1) yields
// (a2*a1, a2*b1 + b2); the identity is (1, 0).
struct ScanElement {
    double a = 1.0;
    double b = 0.0;
};

inline ScanElement compose(const ScanElement& later, const ScanElement& earlier) {
    return {later.a * earlier.a, later.a * earlier.b + later.b};
}

inline double apply(const ScanElement& e, double h0) { return e.a * h0 + e.b; }

// Slot-wise scans over row-major [L x S] coefficient arrays. Each of the S
// slots runs an independent scalar recurrence; h0 may be null (zero state).
// Output h is [L x S] with h[t] the state after consuming step t.

void scan_sequential(const double* a, const double* b, const double* h0, double* h,
                     std::size_t len, std::size_t slots);

// Work-efficient two-phase (up-sweep / down-sweep) scan over the composition
// monoid. Non-power-of-two lengths are padded with identity elements.
// Matches scan_sequential elementwise up to floating-point reassociation.
void scan_blelloch(const double* a, const double* b, const double* h0, double* h,
                   std::size_t len, std::size_t slots);

}  // namespace rankssm
