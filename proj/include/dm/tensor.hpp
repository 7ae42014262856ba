#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dm/errors.hpp"

namespace dm {

// All tensor buffers are allocated at Eigen's preferred alignment so the
// vectorized kernels take identical code paths on every call; forward passes
// stay bitwise reproducible.
template <typename S>
using AlignedBuffer = std::vector<S, Eigen::aligned_allocator<S>>;

// Dense row-major array with an optional gradient buffer. Copies are shallow:
// data/grad are shared, so a Tensor is a cheap value-type handle. The scalar
// type is a template parameter because training and inference run in 32-bit
// while gradient checking runs the same code in 64-bit.
template <typename S>
struct TensorT {
    std::vector<int> shape;
    std::shared_ptr<AlignedBuffer<S>> data;
    std::shared_ptr<AlignedBuffer<S>> grad; // non-null iff requires_grad
    bool requires_grad = false;
    std::string name;

    TensorT() = default;

    std::size_t numel() const { return data ? data->size() : 0; }
    int dim(std::size_t i) const { return shape.at(i); }
    int ndim() const { return static_cast<int>(shape.size()); }

    S* ptr() { return data->data(); }
    const S* ptr() const { return data->data(); }
    S* grad_ptr() { return grad->data(); }
    const S* grad_ptr() const { return grad->data(); }

    // 2-D accessors; row-major [rows, cols].
    int rows() const { return shape.size() == 2 ? shape[0] : 1; }
    int cols() const { return shape.size() == 2 ? shape[1] : (shape.empty() ? 0 : shape[0]); }
    S& at(int r, int c) { return (*data)[static_cast<std::size_t>(r) * shape[1] + c]; }
    S at(int r, int c) const { return (*data)[static_cast<std::size_t>(r) * shape[1] + c]; }
    S& at(int i) { return (*data)[static_cast<std::size_t>(i)]; }
    S at(int i) const { return (*data)[static_cast<std::size_t>(i)]; }

    void ensure_grad() {
        requires_grad = true;
        if (!grad) grad = std::make_shared<AlignedBuffer<S>>(numel(), S(0));
    }

    void zero_grad() {
        if (grad) std::fill(grad->begin(), grad->end(), S(0));
    }

    void drop_grad() {
        requires_grad = false;
        grad.reset();
    }

    // Deep copy of values; gradient state is reset.
    TensorT<S> clone_values() const {
        TensorT<S> t;
        t.shape = shape;
        t.data = std::make_shared<AlignedBuffer<S>>(*data);
        t.name = name;
        return t;
    }

    // Shares the value buffer, owns a fresh zero gradient. Workers use this
    // to read common weights while accumulating private gradients.
    TensorT<S> grad_view() const {
        TensorT<S> t;
        t.shape = shape;
        t.data = data;
        t.name = name;
        if (requires_grad) t.ensure_grad();
        return t;
    }
};

template <typename S>
std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension");
        n *= static_cast<std::size_t>(d);
    }
    return shape.empty() ? 0 : n;
}

template <typename S>
TensorT<S> zeros(std::vector<int> shape) {
    TensorT<S> t;
    const std::size_t n = shape_numel<S>(shape);
    t.shape = std::move(shape);
    t.data = std::make_shared<AlignedBuffer<S>>(n, S(0));
    return t;
}

template <typename S>
TensorT<S> full(std::vector<int> shape, S value) {
    TensorT<S> t = zeros<S>(std::move(shape));
    std::fill(t.data->begin(), t.data->end(), value);
    return t;
}

template <typename S>
TensorT<S> from_values(std::vector<int> shape, std::vector<S> values) {
    const std::size_t n = shape_numel<S>(shape);
    if (n != values.size()) throw ShapeError("value count does not match shape");
    TensorT<S> t;
    t.shape = std::move(shape);
    t.data = std::make_shared<AlignedBuffer<S>>(values.begin(), values.end());
    return t;
}

template <typename S>
TensorT<S> scalar_tensor(S v) {
    return from_values<S>({1}, {v});
}

enum class Mode { train, infer };

// Execution record for one forward pass. Train mode records a closure per op
// that knows how to push gradients from the op's output to its inputs; infer
// mode records nothing. backward() replays the tape in exact reverse
// execution order, accumulating additively into grad buffers.
template <typename S>
class GraphT {
public:
    explicit GraphT(Mode m = Mode::train) : mode_(m) {}

    Mode mode() const { return mode_; }
    bool training() const { return mode_ == Mode::train; }

    void record(std::function<void()> fn) {
        if (training()) tape_.push_back(std::move(fn));
    }

    // Seeds d(root)/d(root) = seed and propagates. root must be scalar.
    void backward(TensorT<S>& root, S seed = S(1)) {
        if (root.numel() != 1) throw ShapeError("backward root must be scalar");
        if (!root.requires_grad) throw ShapeError("backward root does not require grad");
        (*root.grad)[0] += seed;
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    }

    void clear() { tape_.clear(); }
    std::size_t op_count() const { return tape_.size(); }

private:
    Mode mode_;
    std::vector<std::function<void()>> tape_;
};

using Tensor = TensorT<float>;
using Graph = GraphT<float>;

namespace detail {

template <typename S>
inline void check_finite(const TensorT<S>& t, const char* op) {
#ifndef NDEBUG
    for (S v : *t.data) {
        if (!std::isfinite(static_cast<double>(v)))
            throw DataError(std::string("non-finite value produced by ") + op);
    }
#else
    (void)t;
    (void)op;
#endif
}

} // namespace detail

} // namespace dm
