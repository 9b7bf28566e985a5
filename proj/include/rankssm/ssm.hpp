#pragma once

#include <utility>
#include <vector>

#include "rankssm/nn.hpp"
#include "rankssm/scan.hpp"
#include "rankssm/tensor.hpp"

namespace rankssm {

enum class SsmMode { lti, selective };
enum class ScanKind { sequential, parallel };
enum class BackwardMemory { store_all, recompute };

// Diagonal state space parameters for D independent channels with N states
// each. A is stored as a_log with A = -exp(a_log), which keeps every diagonal
// entry strictly negative. In LTI mode B, C and delta are static per channel;
// in selective mode they are produced from the input by linear projections
// (delta through softplus(linear + bias) so it stays positive).
struct SsmParams {
    SsmMode mode = SsmMode::lti;
    int n_state = 0;
    int d_channels = 0;

    Tensor a_log;  // [D x N]
    Tensor skip_d; // [D], optional skip path y += D * x (undefined = off)

    // LTI mode
    Tensor b_static;     // [D x N]
    Tensor c_static;     // [D x N]
    Tensor delta_static; // [D], strictly positive

    // selective mode
    Projection delta_proj;  // D -> D, with bias
    Projection b_proj;      // D -> N
    Projection c_proj;      // D -> N
};

// A_log initialization: A[d][n] = -(n + 1), identical across channels.
Tensor init_a_log(int n_state, int d_channels);

SsmParams make_lti_params(int n_state, int d_channels, Rng& rng, bool skip = true);
SsmParams make_selective_params(int n_state, int d_channels, Rng& rng, bool skip = true);

// Zero-order-hold discretization: a_bar = exp(delta*a),
// b_bar = (exp(delta*a) - 1)/a * b, with the removable singularity
// |delta*a| < 1e-8 replaced by its series limit b_bar = delta * b.
std::pair<double, double> discretize_zoh(double delta, double a, double b);

// Elementwise tensor version (all shapes equal); differentiable.
std::pair<Tensor, Tensor> discretize_zoh(const Tensor& delta, const Tensor& a, const Tensor& b);

// One discretized timestep: h_t = a_bar ∘ h_{t-1} + b_bar_x.
struct DiscretizedStep {
    Tensor a_bar;
    Tensor b_bar_x;
};

// Exact left fold of the affine recurrence; h0 defaults to zeros. Empty input
// yields empty output. These operate on values only (no tape).
std::vector<Tensor> recurrent_scan_sequential(const std::vector<DiscretizedStep>& steps,
                                              const Tensor& h0 = {});
std::vector<Tensor> recurrent_scan_parallel(const std::vector<DiscretizedStep>& steps,
                                            const Tensor& h0 = {});

// Unrolled LTI kernel K[d][k] = sum_n c[d,n] * a_bar[d,n]^k * b_bar[d,n].
struct ConvKernel {
    Tensor taps;  // [D x L]
    int length = 0;
};

ConvKernel build_conv_kernel(const SsmParams& params, int length);  // LTI only

// Causal convolution y_t = sum_{k<=t} taps[k] * x_{t-k}, direct O(L^2).
Tensor conv_apply_causal(const Tensor& x, const ConvKernel& kernel);  // x is [L x D]

// LTI forward in both modes (value-only): y[t,d] = sum_n c*h (+ skip*x).
Tensor lti_forward_recurrent(const SsmParams& params, const Tensor& x,
                             ScanKind kind = ScanKind::sequential);
Tensor lti_forward_conv(const SsmParams& params, const Tensor& x);

// Input-dependent (Delta, B, C) for a whole sequence; differentiable.
struct SelectiveInputs {
    Tensor delta;  // [L x D], positive
    Tensor b;      // [L x N]
    Tensor c;      // [L x N]
};

SelectiveInputs selective_parameterize(const Tensor& x, const SsmParams& params);

// Full selective scan: parameterize, discretize, recur, emit
// y[t,d] = sum_n c[t,n]*h[t,d,n] + skip[d]*x[t,d]. Differentiable with respect
// to x and every parameter. store_all keeps all hidden states for the
// backward pass; recompute keeps only sqrt(L)-spaced boundary states and
// replays each chunk during backward.
Tensor selective_scan(const Tensor& x, const SsmParams& params,
                      ScanKind kind = ScanKind::sequential,
                      BackwardMemory memory = BackwardMemory::store_all);

// Mamba block: in-projection to (ssm path, gate), depthwise causal conv,
// SiLU, selective scan, SiLU-gated multiply, out-projection, with a residual
// add around the whole block and RMSNorm in front.
struct MambaBlockParams {
    Tensor norm_w;   // [d_model]
    Projection in_x; // d_model -> d_inner
    Projection in_z; // d_model -> d_inner
    Tensor conv_w;   // [d_inner x conv_width]
    Tensor conv_b;   // [d_inner]
    SsmParams ssm;   // selective, D = d_inner
    Projection out;  // d_inner -> d_model
};

MambaBlockParams make_mamba_block(int d_model, int n_state, Rng& rng, int expand = 2,
                                  int conv_width = 4);

Tensor mamba_block_forward(const Tensor& u, const MambaBlockParams& block,
                           ScanKind kind = ScanKind::sequential,
                           BackwardMemory memory = BackwardMemory::store_all);

}  // namespace rankssm
