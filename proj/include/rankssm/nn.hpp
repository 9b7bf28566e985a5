#pragma once

#include <optional>

#include "rankssm/ops.hpp"
#include "rankssm/tensor.hpp"

namespace rankssm {

// Low-rank additive adapter. Effective weight = base + (alpha/rank) * down * up.
// up starts at zero, so a freshly wrapped layer computes exactly the base map.
struct LoraAdapter {
    Tensor down;  // [d_in x rank]
    Tensor up;    // [rank x d_out]
    int rank = 0;
    double alpha = 1.0;
};

// Linear map with optional bias and optional LoRA adapter. When an adapter is
// attached the base weight (and bias) are frozen and only down/up train.
struct Projection {
    Tensor w;  // [d_in x d_out]
    Tensor b;  // [d_out], optional (undefined when absent)
    std::optional<LoraAdapter> lora;

    int d_in() const { return w.dim(0); }
    int d_out() const { return w.dim(1); }
};

Projection make_projection(int d_in, int d_out, Rng& rng, bool bias = false,
                           double init_std = 0.02);

// x is [L x d_in]; returns [L x d_out].
Tensor forward(const Projection& p, const Tensor& x);

// Attaches a rank-r adapter, freezes the base weights. Requires
// 1 <= rank <= min(d_in, d_out).
void lora_wrap(Projection& p, int rank, double alpha, Rng& rng);

}  // namespace rankssm
