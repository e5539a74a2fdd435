#pragma once

#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "spectralca/tensor.hpp"

namespace spectralca {

/// A trainable tensor with its accumulated gradient. Names are canonical
/// dotted paths ("block1.attention.q_spatial.weight") and unique per model.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Every operation appends a node holding its output and
/// a backward rule; backward() replays the nodes once, in reverse order, and
/// finally adds leaf gradients into the bound Parameters.
template <typename T>
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that never receives a gradient (data, labels, masks).
    Var<T> constant(Tensor<T> value);
    /// Leaf that receives a gradient, readable through grad() after backward.
    Var<T> input(Tensor<T> value);
    /// Leaf bound to a parameter; its value is referenced, not copied.
    Var<T> param(Parameter<T>& p);

    /// Appends an op node. Output must be finite. The backward rule is
    /// dropped when gradients are disabled or no input requires one.
    Var<T> record(std::string_view op, Tensor<T> out, std::initializer_list<Var<T>> inputs, Backward backward);

    const Tensor<T>& value(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    bool requires_grad(Var<T> v) const { return requires_grad(v.id); }

    /// Gradient accumulator for a node, zero-allocated on first access.
    Tensor<T>& grad_buffer(std::size_t id);
    /// Gradient of a node after backward, or nullptr if none reached it.
    const Tensor<T>* grad(Var<T> v) const;

    void backward(Var<T> root);
    void backward(Var<T> root, const Tensor<T>& seed);

    std::size_t size() const noexcept { return nodes_.size(); }
    bool grad_enabled() const noexcept { return grad_enabled_; }

private:
    struct Node {
        std::string_view op;
        Tensor<T> value;
        const Tensor<T>* external = nullptr;
        Parameter<T>* param = nullptr;
        bool requires_grad = false;
        bool has_grad = false;
        Backward backward;
        Tensor<T> grad;
    };

    Var<T> push(Node node);

    std::vector<Node> nodes_;
    bool grad_enabled_;
    bool replayed_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return tape->value(id);
}

// ---------------------------------------------------------------------------
// Core differentiable operations. Broadcasting is singleton-axis expansion at
// equal rank only.

/// a + b; b may have extent 1 on any axis where a does not.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);

/// Elementwise product of equal-shaped tensors.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> a, T factor);

template <typename T>
Var<T> sum_all(Var<T> a);

template <typename T>
Var<T> mean_all(Var<T> a);

/// Arithmetic mean along one axis; the axis is removed from the shape.
template <typename T>
Var<T> mean_axis(Var<T> a, std::size_t axis);

/// Concatenation along axis 1.
template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);

template <typename T>
Var<T> reshape(Var<T> a, Shape shape);

/// out.shape[i] = a.shape[perm[i]].
template <typename T>
Var<T> permute(Var<T> a, std::vector<std::size_t> perm);

/// Replicates singleton axes of a up to `shape` (same rank).
template <typename T>
Var<T> expand(Var<T> a, Shape shape);

/// Batched matrix product over equal leading axes:
/// op(a)[..., M, K] x op(b)[..., K, N] -> [..., M, N].
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_a = false, bool transpose_b = false);

}  // namespace spectralca
