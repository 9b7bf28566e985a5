#include "rankssm/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <string>

namespace rankssm {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const MatRM>;
using Map = Eigen::Map<MatRM>;

ConstMap as_mat(std::span<const double> v, std::int64_t rows, std::int64_t cols) {
    return ConstMap(v.data(), rows, cols);
}

Map as_mat(std::span<double> v, std::int64_t rows, std::int64_t cols) {
    return Map(v.data(), rows, cols);
}

// Trailing-dimension broadcast: b's shape must be a suffix of a's.
void check_broadcast(const char* op, const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    bool ok = sb.size() <= sa.size();
    if (ok) {
        for (std::size_t i = 0; i < sb.size(); ++i) {
            if (sb[sb.size() - 1 - i] != sa[sa.size() - 1 - i]) {
                ok = false;
                break;
            }
        }
    }
    if (!ok) {
        throw DimError(std::string(op) + ": shape " + shape_str(sb) +
                       " does not trailing-broadcast to " + shape_str(sa));
    }
}

}  // namespace

void finalize_op(const char* op, Tensor& out, const std::vector<Tensor>& inputs,
                 std::function<void()> backward_fn) {
    bool record = grad_enabled();
    if (record) {
        record = false;
        for (const Tensor& t : inputs) {
            if (t.requires_grad()) {
                record = true;
                break;
            }
        }
    }
    if (record) {
        const int id = tape().record(op, inputs, std::move(backward_fn));
        out.set_tape_id(id);
        out.set_requires_grad(true);
    }
    if (debug_checks()) check_finite(out, op);
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_scalar(double x) {
    if (x > 30.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw DimError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
    }
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({static_cast<int>(m), static_cast<int>(n)});
    as_mat(out.mutable_data(), m, n).noalias() = as_mat(a.data(), m, k) * as_mat(b.data(), k, n);

    finalize_op("matmul", out, {a, b}, [a, b, out, m, k, n]() mutable {
        auto go = out.grad_view();
        if (go.empty()) return;
        ConstMap g = as_mat(go, m, n);
        if (a.requires_grad()) {
            as_mat(a.grad(), m, k).noalias() += g * as_mat(b.data(), k, n).transpose();
        }
        if (b.requires_grad()) {
            as_mat(b.grad(), k, n).noalias() += as_mat(a.data(), m, k).transpose() * g;
        }
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_broadcast("add", a, b);
    const std::size_t inner = static_cast<std::size_t>(b.numel());
    const std::size_t total = static_cast<std::size_t>(a.numel());
    Tensor out = Tensor::zeros(a.shape());
    auto oa = a.data();
    auto ob = b.data();
    auto oo = out.mutable_data();
    for (std::size_t i = 0; i < total; ++i) oo[i] = oa[i] + ob[i % inner];

    finalize_op("add", out, {a, b}, [a, b, out, inner, total]() mutable {
        auto go = out.grad_view();
        if (go.empty()) return;
        if (a.requires_grad()) {
            auto ga = a.grad();
            for (std::size_t i = 0; i < total; ++i) ga[i] += go[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            for (std::size_t i = 0; i < total; ++i) gb[i % inner] += go[i];
        }
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_broadcast("sub", a, b);
    const std::size_t inner = static_cast<std::size_t>(b.numel());
    const std::size_t total = static_cast<std::size_t>(a.numel());
    Tensor out = Tensor::zeros(a.shape());
    auto oa = a.data();
    auto ob = b.data();
    auto oo = out.mutable_data();
    for (std::size_t i = 0; i < total; ++i) oo[i] = oa[i] - ob[i % inner];

    finalize_op("sub", out, {a, b}, [a, b, out, inner, total]() mutable {
        auto go = out.grad_view();
        if (go.empty()) return;
        if (a.requires_grad()) {
            auto ga = a.grad();
            for (std::size_t i = 0; i < total; ++i) ga[i] += go[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            for (std::size_t i = 0; i < total; ++i) gb[i % inner] -= go[i];
        }
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_broadcast("mul", a, b);
    const std::size_t inner = static_cast<std::size_t>(b.numel());
    const std::size_t total = static_cast<std::size_t>(a.numel());
    Tensor out = Tensor::zeros(a.shape());
    auto oa = a.data();
    auto ob = b.data();
    auto oo = out.mutable_data();
    for (std::size_t i = 0; i < total; ++i) oo[i] = oa[i] * ob[i % inner];

    finalize_op("mul", out, {a, b}, [a, b, out, inner, total]() mutable {
        auto go = out.grad_view();
        if (go.empty()) return;
        auto da = a.data();
        auto db = b.data();
        if (a.requires_grad()) {
            auto ga = a.grad();
            for (std::size_t i = 0; i < total; ++i) ga[i] += go[i] * db[i % inner];
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            for (std::size_t i = 0; i < total; ++i) gb[i % inner] += go[i] * da[i];
        }
    });
    return out;
}

Tensor scale(const Tensor& a, double c) {
    if (!std::isfinite(c)) throw NumericError("scale: non-finite factor");
    const std::size_t total = static_cast<std::size_t>(a.numel());
    Tensor out = Tensor::zeros(a.shape());
    auto oa = a.data();
    auto oo = out.mutable_data();
    for (std::size_t i = 0; i < total; ++i) oo[i] = c * oa[i];

    finalize_op("scale", out, {a}, [a, out, c, total]() mutable {
        auto go = out.grad_view();
        if (go.empty() || !a.requires_grad()) return;
        auto ga = a.grad();
        for (std::size_t i = 0; i < total; ++i) ga[i] += c * go[i];
    });
    return out;
}

Tensor exp(const Tensor& x) {
    const std::size_t total = static_cast<std::size_t>(x.numel());
    Tensor out = Tensor::zeros(x.shape());
    auto ox = x.data();
    auto oo = out.mutable_data();
    for (std::size_t i = 0; i < total; ++i) oo[i] = std::exp(ox[i]);

    finalize_op("exp", out, {x}, [x, out, total]() mutable {
        auto go = out.grad_view();
        if (go.empty() || !x.requires_grad()) return;
        auto gx = x.grad();
        auto y = out.data();
        for (std::size_t i = 0; i < total; ++i) gx[i] += go[i] * y[i];
    });
    return out;
}

Tensor softplus(const Tensor& x) {
    const std::size_t total = static_cast<std::size_t>(x.numel());
    Tensor out = Tensor::zeros(x.shape());
    auto ox = x.data();
    auto oo = out.mutable_data();
    for (std::size_t i = 0; i < total; ++i) oo[i] = softplus_scalar(ox[i]);

    finalize_op("softplus", out, {x}, [x, out, total]() mutable {
        auto go = out.grad_view();
        if (go.empty() || !x.requires_grad()) return;
        auto gx = x.grad();
        auto xv = x.data();
        for (std::size_t i = 0; i < total; ++i) gx[i] += go[i] * sigmoid_scalar(xv[i]);
    });
    return out;
}

Tensor silu(const Tensor& x) {
    const std::size_t total = static_cast<std::size_t>(x.numel());
    Tensor out = Tensor::zeros(x.shape());
    auto ox = x.data();
    auto oo = out.mutable_data();
    for (std::size_t i = 0; i < total; ++i) oo[i] = ox[i] * sigmoid_scalar(ox[i]);

    finalize_op("silu", out, {x}, [x, out, total]() mutable {
        auto go = out.grad_view();
        if (go.empty() || !x.requires_grad()) return;
        auto gx = x.grad();
        auto xv = x.data();
        for (std::size_t i = 0; i < total; ++i) {
            const double s = sigmoid_scalar(xv[i]);
            gx[i] += go[i] * s * (1.0 + xv[i] * (1.0 - s));
        }
    });
    return out;
}

Tensor softmax_lastdim(const Tensor& x) {
    if (x.ndim() < 1) throw DimError("softmax_lastdim: rank-0 input");
    const std::size_t d = static_cast<std::size_t>(x.shape().back());
    const std::size_t rows = static_cast<std::size_t>(x.numel()) / d;
    Tensor out = Tensor::zeros(x.shape());
    auto ox = x.data();
    auto oo = out.mutable_data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = ox.data() + r * d;
        double* yr = oo.data() + r * d;
        double mx = xr[0];
        for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, xr[i]);
        double z = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            yr[i] = std::exp(xr[i] - mx);
            z += yr[i];
        }
        for (std::size_t i = 0; i < d; ++i) yr[i] /= z;
    }

    finalize_op("softmax_lastdim", out, {x}, [x, out, rows, d]() mutable {
        auto go = out.grad_view();
        if (go.empty() || !x.requires_grad()) return;
        auto gx = x.grad();
        auto y = out.data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = y.data() + r * d;
            const double* gr = go.data() + r * d;
            double dot = 0.0;
            for (std::size_t i = 0; i < d; ++i) dot += gr[i] * yr[i];
            double* gxr = gx.data() + r * d;
            for (std::size_t i = 0; i < d; ++i) gxr[i] += (gr[i] - dot) * yr[i];
        }
    });
    return out;
}

Tensor rmsnorm(const Tensor& x, const Tensor& weight, double eps) {
    if (eps <= 0.0) throw ConfigError("rmsnorm: eps must be > 0");
    const std::size_t d = static_cast<std::size_t>(x.shape().back());
    if (weight.ndim() != 1 || static_cast<std::size_t>(weight.dim(0)) != d) {
        throw DimError("rmsnorm: weight shape " + shape_str(weight.shape()) +
                       " does not match last dim of " + shape_str(x.shape()));
    }
    const std::size_t rows = static_cast<std::size_t>(x.numel()) / d;
    Tensor out = Tensor::zeros(x.shape());
    auto ox = x.data();
    auto ow = weight.data();
    auto oo = out.mutable_data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = ox.data() + r * d;
        double* yr = oo.data() + r * d;
        double ms = 0.0;
        for (std::size_t i = 0; i < d; ++i) ms += xr[i] * xr[i];
        const double rinv = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
        for (std::size_t i = 0; i < d; ++i) yr[i] = xr[i] * ow[i] * rinv;
    }

    finalize_op("rmsnorm", out, {x, weight}, [x, weight, out, rows, d, eps]() mutable {
        auto go = out.grad_view();
        if (go.empty()) return;
        auto xv = x.data();
        auto wv = weight.data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* xr = xv.data() + r * d;
            const double* gr = go.data() + r * d;
            double ms = 0.0;
            for (std::size_t i = 0; i < d; ++i) ms += xr[i] * xr[i];
            const double rinv = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
            if (x.requires_grad()) {
                double s = 0.0;
                for (std::size_t i = 0; i < d; ++i) s += gr[i] * wv[i] * xr[i];
                const double c = rinv * rinv * rinv * s / static_cast<double>(d);
                double* gxr = x.grad().data() + r * d;
                for (std::size_t i = 0; i < d; ++i) gxr[i] += rinv * gr[i] * wv[i] - c * xr[i];
            }
            if (weight.requires_grad()) {
                auto gw = weight.grad();
                for (std::size_t i = 0; i < d; ++i) gw[i] += gr[i] * xr[i] * rinv;
            }
        }
    });
    return out;
}

Tensor transpose(const Tensor& x) {
    if (x.ndim() != 2) throw DimError("transpose: expected 2-d, got " + shape_str(x.shape()));
    const std::size_t m = static_cast<std::size_t>(x.dim(0));
    const std::size_t n = static_cast<std::size_t>(x.dim(1));
    Tensor out = Tensor::zeros({static_cast<int>(n), static_cast<int>(m)});
    auto ox = x.data();
    auto oo = out.mutable_data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) oo[j * m + i] = ox[i * n + j];
    }

    finalize_op("transpose", out, {x}, [x, out, m, n]() mutable {
        auto go = out.grad_view();
        if (go.empty() || !x.requires_grad()) return;
        auto gx = x.grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += go[j * m + i];
        }
    });
    return out;
}

Tensor sum(const Tensor& x) {
    const std::size_t total = static_cast<std::size_t>(x.numel());
    auto ox = x.data();
    double s = 0.0;
    for (std::size_t i = 0; i < total; ++i) s += ox[i];
    Tensor out = Tensor::scalar(s);

    finalize_op("sum", out, {x}, [x, out, total]() mutable {
        auto go = out.grad_view();
        if (go.empty() || !x.requires_grad()) return;
        const double g = go[0];
        auto gx = x.grad();
        for (std::size_t i = 0; i < total; ++i) gx[i] += g;
    });
    return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor select_row(const Tensor& x, int row) {
    if (x.ndim() != 2) throw DimError("select_row: expected 2-d, got " + shape_str(x.shape()));
    if (row < 0 || row >= x.dim(0)) {
        throw ContractError("select_row: row " + std::to_string(row) + " out of range for " +
                            shape_str(x.shape()));
    }
    const std::size_t d = static_cast<std::size_t>(x.dim(1));
    Tensor out = Tensor::zeros({1, static_cast<int>(d)});
    auto ox = x.data();
    auto oo = out.mutable_data();
    for (std::size_t i = 0; i < d; ++i) oo[i] = ox[static_cast<std::size_t>(row) * d + i];

    finalize_op("select_row", out, {x}, [x, out, row, d]() mutable {
        auto go = out.grad_view();
        if (go.empty() || !x.requires_grad()) return;
        auto gx = x.grad();
        for (std::size_t i = 0; i < d; ++i) gx[static_cast<std::size_t>(row) * d + i] += go[i];
    });
    return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) {
        throw DimError("embedding: table must be 2-d, got " + shape_str(table.shape()));
    }
    const int vocab = table.dim(0);
    const std::size_t d = static_cast<std::size_t>(table.dim(1));
    for (int id : ids) {
        if (id < 0 || id >= vocab) {
            throw ContractError("embedding: id " + std::to_string(id) + " outside vocab of " +
                                std::to_string(vocab));
        }
    }
    const std::size_t len = ids.size();
    Tensor out = Tensor::zeros({static_cast<int>(len), static_cast<int>(d)});
    auto ot = table.data();
    auto oo = out.mutable_data();
    for (std::size_t t = 0; t < len; ++t) {
        const double* src = ot.data() + static_cast<std::size_t>(ids[t]) * d;
        std::memcpy(oo.data() + t * d, src, d * sizeof(double));
    }

    finalize_op("embedding", out, {table}, [table, out, ids, d, len]() mutable {
        auto go = out.grad_view();
        if (go.empty() || !table.requires_grad()) return;
        auto gt = table.grad();
        for (std::size_t t = 0; t < len; ++t) {
            double* dst = gt.data() + static_cast<std::size_t>(ids[t]) * d;
            const double* src = go.data() + t * d;
            for (std::size_t i = 0; i < d; ++i) dst[i] += src[i];
        }
    });
    return out;
}

Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1 || x.dim(1) != w.dim(0) ||
        b.dim(0) != w.dim(0)) {
        throw DimError("causal_conv1d: incompatible shapes x=" + shape_str(x.shape()) +
                       " w=" + shape_str(w.shape()) + " b=" + shape_str(b.shape()));
    }
    const std::size_t L = static_cast<std::size_t>(x.dim(0));
    const std::size_t D = static_cast<std::size_t>(x.dim(1));
    const std::size_t K = static_cast<std::size_t>(w.dim(1));
    Tensor out = Tensor::zeros(x.shape());
    auto ox = x.data();
    auto ow = w.data();
    auto ob = b.data();
    auto oo = out.mutable_data();
    for (std::size_t t = 0; t < L; ++t) {
        for (std::size_t d = 0; d < D; ++d) {
            double acc = ob[d];
            const std::size_t jmax = std::min(K - 1, t);
            for (std::size_t j = 0; j <= jmax; ++j) acc += ow[d * K + j] * ox[(t - j) * D + d];
            oo[t * D + d] = acc;
        }
    }

    finalize_op("causal_conv1d", out, {x, w, b}, [x, w, b, out, L, D, K]() mutable {
        auto go = out.grad_view();
        if (go.empty()) return;
        auto xv = x.data();
        auto wv = w.data();
        for (std::size_t t = 0; t < L; ++t) {
            for (std::size_t d = 0; d < D; ++d) {
                const double g = go[t * D + d];
                if (g == 0.0) continue;
                const std::size_t jmax = std::min(K - 1, t);
                if (x.requires_grad()) {
                    auto gx = x.grad();
                    for (std::size_t j = 0; j <= jmax; ++j) gx[(t - j) * D + d] += g * wv[d * K + j];
                }
                if (w.requires_grad()) {
                    auto gw = w.grad();
                    for (std::size_t j = 0; j <= jmax; ++j) gw[d * K + j] += g * xv[(t - j) * D + d];
                }
                if (b.requires_grad()) b.grad()[d] += g;
            }
        }
    });
    return out;
}

}  // namespace rankssm
