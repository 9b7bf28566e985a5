#pragma once

#include <vector>

#include "rankssm/memtrack.hpp"
#include "rankssm/tensor.hpp"

namespace rankssm {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with decoupled weight decay: each step first shrinks the parameter by
// lr * weight_decay * param, then applies the bias-corrected moment update.
// The decay never passes through the moment buffers.
class AdamW {
public:
    explicit AdamW(std::vector<Tensor> params, AdamWConfig cfg = {});

    void step(double lr);  // lr >= 0; reads grads from the parameters
    void zero_grad();
    long step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }

private:
    std::vector<Tensor> params_;
    std::vector<Buffer> m_, v_;
    long step_ = 0;
    AdamWConfig cfg_;
};

// Linear warmup to base_lr at warmup_steps, then linear decay to zero at
// total_steps. Continuous and piecewise linear, peaking exactly at base_lr.
double warmup_linear_lr(long step, double base_lr, long warmup_steps, long total_steps);

}  // namespace rankssm
