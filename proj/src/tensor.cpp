#include "rankssm/tensor.hpp"

#include <cmath>
#include <sstream>

namespace rankssm {

namespace {
thread_local GradTape g_tape;
thread_local bool g_grad_enabled = true;
#ifdef NDEBUG
bool g_debug_checks = false;
#else
bool g_debug_checks = true;
#endif
}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d < 0) throw DimError("negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

Tensor Tensor::make(Shape shape) {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    const std::int64_t n = shape_numel(shape);
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(static_cast<std::size_t>(n), 0.0);
    return t;
}

Tensor Tensor::zeros(Shape shape) { return make(std::move(shape)); }

Tensor Tensor::full(Shape shape, double value) {
    Tensor t = make(std::move(shape));
    for (double& x : t.impl_->data) x = value;
    check_finite(t, "full");
    return t;
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    const std::int64_t n = shape_numel(shape);
    if (n != static_cast<std::int64_t>(values.size())) {
        throw DimError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    Tensor t = make(std::move(shape));
    std::copy(values.begin(), values.end(), t.impl_->data.begin());
    check_finite(t, "from");
    return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double mean, double stddev) {
    Tensor t = make(std::move(shape));
    for (double& x : t.impl_->data) x = rng.normal(mean, stddev);
    return t;
}

std::span<double> Tensor::grad() const {
    if (!impl_->grad) {
        impl_->grad = std::make_unique<Buffer>(impl_->data.size(), 0.0);
    }
    return {impl_->grad->data(), impl_->grad->size()};
}

std::span<const double> Tensor::grad_view() const {
    if (!impl_->grad) return {};
    return {impl_->grad->data(), impl_->grad->size()};
}

void Tensor::zero_grad() const {
    if (impl_->grad) {
        for (double& g : *impl_->grad) g = 0.0;
    }
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() requires a scalar tensor, got shape " + shape_str(shape()));
    }
    return impl_->data[0];
}

void check_finite(const Tensor& t, const char* what) {
    for (double x : t.data()) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite value in ") + what);
        }
    }
}

bool debug_checks() { return g_debug_checks; }
void set_debug_checks(bool on) { g_debug_checks = on; }

int GradTape::record(const char* op, std::initializer_list<Tensor> inputs,
                     std::function<void()> fn) {
    return record(op, std::vector<Tensor>(inputs), std::move(fn));
}

int GradTape::record(const char* op, const std::vector<Tensor>& inputs,
                     std::function<void()> fn) {
    TapeNode node;
    node.op = op;
    node.inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) node.inputs.push_back(t.tape_id());
    node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

void GradTape::backward(Tensor& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " +
                            shape_str(loss.shape()));
    }
    if (nodes_.empty()) {
        throw ContractError("backward() called on an empty tape");
    }
    check_finite(loss, "loss");
    loss.grad()[0] += 1.0;
    for (std::size_t i = nodes_.size(); i > 0; --i) {
        nodes_[i - 1].backward();
    }
}

GradTape& tape() { return g_tape; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool should_record(std::initializer_list<Tensor> inputs) {
    if (!g_grad_enabled) return false;
    for (const Tensor& t : inputs) {
        if (t.requires_grad()) return true;
    }
    return false;
}

void backward(Tensor& loss) { tape().backward(loss); }

}  // namespace rankssm
