#include "rankssm/scan.hpp"

#include <cstring>

namespace rankssm {

void scan_sequential(const double* a, const double* b, const double* h0, double* h,
                     std::size_t len, std::size_t slots) {
    if (len == 0) return;
    for (std::size_t s = 0; s < slots; ++s) {
        h[s] = a[s] * (h0 ? h0[s] : 0.0) + b[s];
    }
    for (std::size_t t = 1; t < len; ++t) {
        const double* at = a + t * slots;
        const double* bt = b + t * slots;
        const double* hp = h + (t - 1) * slots;
        double* ht = h + t * slots;
        for (std::size_t s = 0; s < slots; ++s) {
            ht[s] = at[s] * hp[s] + bt[s];
        }
    }
}

void scan_blelloch(const double* a, const double* b, const double* h0, double* h,
                   std::size_t len, std::size_t slots) {
    if (len == 0) return;
    std::size_t p = 1;
    while (p < len) p <<= 1;

    // wa/wb hold the element tree; rows beyond len stay at the identity (1, 0).
    Buffer wa(p * slots, 1.0);
    Buffer wb(p * slots, 0.0);
    std::memcpy(wa.data(), a, len * slots * sizeof(double));
    std::memcpy(wb.data(), b, len * slots * sizeof(double));

    // Up-sweep: each block's last row becomes (left-half ∘ earlier order) the
    // composition of the block. Right row r absorbs left row l with r later.
    for (std::size_t step = 2; step <= p; step <<= 1) {
        const std::size_t half = step >> 1;
        for (std::size_t i = step - 1; i < p; i += step) {
            double* ra = wa.data() + i * slots;
            double* rb = wb.data() + i * slots;
            const double* la = wa.data() + (i - half) * slots;
            const double* lb = wb.data() + (i - half) * slots;
            for (std::size_t s = 0; s < slots; ++s) {
                rb[s] = ra[s] * lb[s] + rb[s];
                ra[s] = ra[s] * la[s];
            }
        }
    }

    // Down-sweep: converts the tree into exclusive prefixes. The carried
    // prefix is earlier than the left-subtree value it combines with.
    for (std::size_t s = 0; s < slots; ++s) {
        wa[(p - 1) * slots + s] = 1.0;
        wb[(p - 1) * slots + s] = 0.0;
    }
    for (std::size_t step = p; step >= 2; step >>= 1) {
        const std::size_t half = step >> 1;
        for (std::size_t i = step - 1; i < p; i += step) {
            double* ra = wa.data() + i * slots;
            double* rb = wb.data() + i * slots;
            double* la = wa.data() + (i - half) * slots;
            double* lb = wb.data() + (i - half) * slots;
            for (std::size_t s = 0; s < slots; ++s) {
                const double ta = la[s];
                const double tb = lb[s];
                la[s] = ra[s];
                lb[s] = rb[s];
                // carried (ra, rb) is earlier; left-subtree (ta, tb) is later
                rb[s] = ta * rb[s] + tb;
                ra[s] = ta * ra[s];
            }
        }
    }

    // Inclusive state: h_t = e_t applied to (exclusive prefix applied to h0).
    for (std::size_t t = 0; t < len; ++t) {
        const double* ea = wa.data() + t * slots;
        const double* eb = wb.data() + t * slots;
        const double* at = a + t * slots;
        const double* bt = b + t * slots;
        double* ht = h + t * slots;
        for (std::size_t s = 0; s < slots; ++s) {
            const double prev = ea[s] * (h0 ? h0[s] : 0.0) + eb[s];
            ht[s] = at[s] * prev + bt[s];
        }
    }
}

}  // namespace rankssm
