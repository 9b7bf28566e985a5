#include "rankssm/optim.hpp"

#include <cmath>
#include <string>

#include "rankssm/errors.hpp"

namespace rankssm {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
        v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
}

void AdamW::step(double lr) {
    if (lr < 0.0 || !std::isfinite(lr)) {
        throw ConfigError("AdamW::step: lr must be finite and >= 0");
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (m_[i].size() != static_cast<std::size_t>(p.numel())) {
            throw ConfigError("AdamW::step: state shape does not match parameter " +
                              std::to_string(i));
        }
        auto pv = p.mutable_data();
        auto g = p.grad();
        Buffer& m = m_[i];
        Buffer& v = v_[i];
        for (std::size_t j = 0; j < m.size(); ++j) {
            pv[j] *= 1.0 - lr * cfg_.weight_decay;
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            pv[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void AdamW::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

double warmup_linear_lr(long step, double base_lr, long warmup_steps, long total_steps) {
    if (warmup_steps <= 0 || warmup_steps >= total_steps) {
        throw ConfigError("warmup_linear_lr: need 0 < warmup_steps < total_steps");
    }
    if (step < 0 || step > total_steps) {
        throw ContractError("warmup_linear_lr: step outside [0, total_steps]");
    }
    if (step <= warmup_steps) {
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    return base_lr * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup_steps);
}

}  // namespace rankssm
