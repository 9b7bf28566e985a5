#include "rankssm/nn.hpp"

#include <algorithm>
#include <string>

namespace rankssm {

Projection make_projection(int d_in, int d_out, Rng& rng, bool bias, double init_std) {
    Projection p;
    p.w = Tensor::randn({d_in, d_out}, rng, 0.0, init_std).set_requires_grad(true);
    if (bias) {
        p.b = Tensor::zeros({d_out}).set_requires_grad(true);
    }
    return p;
}

Tensor forward(const Projection& p, const Tensor& x) {
    Tensor y = matmul(x, p.w);
    if (p.b.defined()) y = add(y, p.b);
    if (p.lora) {
        Tensor delta = matmul(matmul(x, p.lora->down), p.lora->up);
        y = add(y, scale(delta, p.lora->alpha / static_cast<double>(p.lora->rank)));
    }
    return y;
}

void lora_wrap(Projection& p, int rank, double alpha, Rng& rng) {
    const int min_dim = std::min(p.d_in(), p.d_out());
    if (rank < 1 || rank > min_dim) {
        throw ConfigError("lora_wrap: rank " + std::to_string(rank) +
                          " must be in [1, " + std::to_string(min_dim) + "]");
    }
    LoraAdapter a;
    a.rank = rank;
    a.alpha = alpha;
    // down follows the fan-in uniform convention of reference adapter
    // implementations; up starts at zero so the wrap is an identity
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.d_in()));
    a.down = Tensor::zeros({p.d_in(), rank});
    for (double& v : a.down.mutable_data()) v = rng.uniform(-bound, bound);
    a.down.set_requires_grad(true);
    a.up = Tensor::zeros({rank, p.d_out()}).set_requires_grad(true);
    p.lora = std::move(a);
    p.w.set_requires_grad(false);
    if (p.b.defined()) p.b.set_requires_grad(false);
}

}  // namespace rankssm
