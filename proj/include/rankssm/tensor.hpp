#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rankssm/errors.hpp"
#include "rankssm/memtrack.hpp"
#include "rankssm/rng.hpp"

namespace rankssm {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// Dense row-major double tensor. Copies are shallow: they alias the same
// data and gradient buffers, so a parameter held by a model and by an
// optimizer list is one object. Data is treated as immutable after creation
// except through mutable_data(), which exists for the optimizer and
// initialization code.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    // Validates finiteness and size; throws DimError / NumericError.
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor randn(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

    std::span<const double> data() const { return {impl_->data.data(), impl_->data.size()}; }
    std::span<double> mutable_data() { return {impl_->data.data(), impl_->data.size()}; }

    bool has_grad() const { return impl_->grad != nullptr; }
    // Lazily allocates a zero gradient buffer. Gradient buffers are the one
    // mutable part of a tensor, so these are callable through const handles.
    std::span<double> grad() const;
    std::span<const double> grad_view() const;
    void zero_grad() const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        impl_->requires_grad = v;
        return *this;
    }

    int tape_id() const { return impl_->tape_id; }
    void set_tape_id(int id) { impl_->tape_id = id; }

    double item() const;
    double at(int i) const { return impl_->data[static_cast<std::size_t>(i)]; }
    double at(int i, int j) const {
        return impl_->data[static_cast<std::size_t>(i) * static_cast<std::size_t>(shape().back()) +
                           static_cast<std::size_t>(j)];
    }

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Impl {
        Shape shape;
        Buffer data;
        std::unique_ptr<Buffer> grad;
        bool requires_grad = false;
        int tape_id = -1;
    };
    std::shared_ptr<Impl> impl_;

    static Tensor make(Shape shape);
};

void check_finite(const Tensor& t, const char* what);

// Runtime toggle for the per-op NaN/Inf sweep. Defaults to on in debug
// builds; release mode checks only at the loss (inside backward()).
bool debug_checks();
void set_debug_checks(bool on);

struct TapeNode {
    const char* op;
    std::vector<int> inputs;          // tape ids of inputs at record time (-1 = leaf)
    std::function<void()> backward;   // accumulates into input grads
};

// Reverse-mode tape. Nodes are appended in forward order, so iterating in
// reverse insertion order is a valid topological order for backward.
class GradTape {
public:
    int record(const char* op, std::initializer_list<Tensor> inputs, std::function<void()> fn);
    int record(const char* op, const std::vector<Tensor>& inputs, std::function<void()> fn);

    // Seeds d(loss)/d(loss) = 1 and runs every node backward in reverse
    // order. The loss must be a scalar on a non-empty tape.
    void backward(Tensor& loss);

    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }
    const TapeNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

private:
    std::vector<TapeNode> nodes_;
};

GradTape& tape();  // thread-local instance

bool grad_enabled();

// Suppresses tape recording in scope; used for inference and the finite
// difference oracles.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// True when recording should happen for an op consuming these inputs.
bool should_record(std::initializer_list<Tensor> inputs);

void backward(Tensor& loss);

}  // namespace rankssm
