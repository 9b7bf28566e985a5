#pragma once

#include <vector>

#include "rankssm/tensor.hpp"

namespace rankssm {

// Differentiable op suite. Every function is a pure free function: it
// computes the output tensor and, when gradients are enabled and some input
// requires them, records one node on the thread-local tape.
//
// Binary elementwise ops support trailing-dimension broadcast only: the
// second operand's shape must equal a trailing suffix of the first's.

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor exp(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softmax_lastdim(const Tensor& x);
Tensor rmsnorm(const Tensor& x, const Tensor& weight, double eps = 1e-5);

Tensor transpose(const Tensor& x);                 // 2-D
Tensor sum(const Tensor& x);                       // -> scalar
Tensor mean(const Tensor& x);                      // -> scalar
Tensor select_row(const Tensor& x, int row);       // [m x d] -> [1 x d]
Tensor embedding(const Tensor& table, const std::vector<int>& ids);  // -> [L x d]

// Depthwise causal 1-d convolution: y[t,d] = b[d] + sum_j w[d,j] * x[t-j,d],
// zero padded on the left. x is [L x D], w is [D x K], b is [D].
Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& b);

// Scalar helpers for the stable softplus/sigmoid used by op backward rules.
double sigmoid_scalar(double x);
double softplus_scalar(double x);

// Shared implementation hook: validates, records the tape node and marks the
// output. Exposed so other modules (scan, losses) can define fused ops.
void finalize_op(const char* op, Tensor& out, const std::vector<Tensor>& inputs,
                 std::function<void()> backward_fn);

}  // namespace rankssm
