#include "spectralca/autodiff.hpp"

#include <algorithm>
#include <numeric>

#include "gemm.hpp"

namespace spectralca {

template <typename T>
Var<T> Tape<T>::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::input(Tensor<T> value) {
    Node n;
    n.op = "input";
    n.value = std::move(value);
    n.requires_grad = grad_enabled_;
    return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
    Node n;
    n.op = "param";
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = grad_enabled_;
    return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> out, std::initializer_list<Var<T>> inputs, Backward backward) {
    if (!out.all_finite()) {
        throw NonFiniteError("non-finite value in output of '" + std::string(op) + "' (shape " +
                             shape_str(out.shape()) + ")");
    }
    Node n;
    n.op = op;
    n.value = std::move(out);
    if (grad_enabled_) {
        n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [this](Var<T> v) {
            return nodes_[v.id].requires_grad;
        });
        if (n.requires_grad) n.backward = std::move(backward);
    }
    return push(std::move(n));
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Tensor<T>(value(id).shape());
        n.has_grad = true;
    }
    return n.grad;
}

template <typename T>
const Tensor<T>* Tape<T>::grad(Var<T> v) const {
    const Node& n = nodes_[v.id];
    return n.has_grad ? &n.grad : nullptr;
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
    if (value(root.id).numel() != 1) {
        throw ShapeError("backward() without a seed needs a scalar root, got " + shape_str(value(root.id).shape()));
    }
    backward(root, Tensor<T>(value(root.id).shape(), T(1)));
}

template <typename T>
void Tape<T>::backward(Var<T> root, const Tensor<T>& seed) {
    if (replayed_) throw std::logic_error("tape has already been replayed");
    if (seed.shape() != value(root.id).shape()) {
        throw ShapeError("seed shape " + shape_str(seed.shape()) + " != root shape " +
                         shape_str(value(root.id).shape()));
    }
    replayed_ = true;
    if (!nodes_[root.id].requires_grad) return;
    Tensor<T>& g = grad_buffer(root.id);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += seed[i];

    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad || !n.backward) continue;
        n.backward(*this, n.grad);
    }
    for (Node& n : nodes_) {
        if (n.param && n.has_grad) {
            auto dst = n.param->grad.data();
            auto src = n.grad.data();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
    }
}

namespace {

// Strides of `src` addressed by indices of `dst` (0 on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape& src, const Shape& dst, std::string_view op) {
    if (src.size() != dst.size()) {
        throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(src) + " vs " + shape_str(dst));
    }
    auto strides = row_major_strides(src);
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i] == dst[i]) continue;
        if (src[i] != 1) {
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(src) + " to " + shape_str(dst));
        }
        strides[i] = 0;
    }
    return strides;
}

// Calls fn(dst_index, src_index) for every dst element in row-major order.
template <typename Fn>
void for_each_broadcast(const Shape& dst, const std::vector<std::size_t>& src_strides, Fn&& fn) {
    const std::size_t total = shape_numel(dst);
    if (total == 0) return;
    if (dst.empty()) {
        fn(std::size_t{0}, std::size_t{0});
        return;
    }
    const std::size_t rank = dst.size();
    const std::size_t inner = dst[rank - 1];
    const std::size_t inner_stride = src_strides[rank - 1];
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src_base = 0;
    for (std::size_t out = 0; out < total; out += inner) {
        for (std::size_t j = 0; j < inner; ++j) fn(out + j, src_base + j * inner_stride);
        for (std::size_t ax = rank - 1; ax-- > 0;) {
            ++idx[ax];
            src_base += src_strides[ax];
            if (idx[ax] < dst[ax]) break;
            src_base -= idx[ax] * src_strides[ax];
            idx[ax] = 0;
        }
    }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    Tensor<T> out = av;
    if (av.shape() == bv.shape()) {
        auto o = out.data();
        auto bd = bv.data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
        return a.tape->record("add", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
            if (t.requires_grad(a)) accumulate(t.grad_buffer(a.id), g);
            if (t.requires_grad(b)) accumulate(t.grad_buffer(b.id), g);
        });
    }
    auto strides = broadcast_strides(bv.shape(), av.shape(), "add");
    const T* bd = bv.ptr();
    T* o = out.ptr();
    for_each_broadcast(av.shape(), strides, [&](std::size_t i, std::size_t j) { o[i] += bd[j]; });
    return a.tape->record("add", std::move(out), {a, b}, [a, b, strides](Tape<T>& t, const Tensor<T>& g) {
        if (t.requires_grad(a)) accumulate(t.grad_buffer(a.id), g);
        if (t.requires_grad(b)) {
            T* gb = t.grad_buffer(b.id).ptr();
            const T* gd = g.ptr();
            for_each_broadcast(g.shape(), strides, [&](std::size_t i, std::size_t j) { gb[j] += gd[i]; });
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (av.shape() != bv.shape()) {
        throw ShapeError("mul: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    }
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
    return a.tape->record("mul", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& av = t.value(a.id);
        const Tensor<T>& bv = t.value(b.id);
        if (t.requires_grad(a)) {
            Tensor<T>& ga = t.grad_buffer(a.id);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(b)) {
            Tensor<T>& gb = t.grad_buffer(b.id);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
    Tensor<T> out = a.value();
    for (T& v : out.data()) v *= factor;
    return a.tape->record("scale", std::move(out), {a}, [a, factor](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& ga = t.grad_buffer(a.id);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * factor;
    });
}

template <typename T>
Var<T> sum_all(Var<T> a) {
    T acc = 0;
    for (T v : a.value().data()) acc += v;
    return a.tape->record("sum_all", Tensor<T>::scalar(acc), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& ga = t.grad_buffer(a.id);
        const T gv = g[0];
        for (T& v : ga.data()) v += gv;
    });
}

template <typename T>
Var<T> mean_all(Var<T> a) {
    const std::size_t n = a.value().numel();
    if (n == 0) throw ShapeError("mean_all of empty tensor");
    return scale(sum_all(a), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> mean_axis(Var<T> a, std::size_t axis) {
    const Tensor<T>& av = a.value();
    if (axis >= av.rank()) {
        throw ShapeError("mean_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(av.shape()));
    }
    const AxisSplit s = split_at(av.shape(), axis);
    if (s.extent == 0) throw ShapeError("mean_axis: empty axis");
    Shape out_shape = av.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    Tensor<T> out(out_shape);
    const T inv = T(1) / static_cast<T>(s.extent);
    const T* src = av.ptr();
    T* dst = out.ptr();
    for (std::size_t o = 0; o < s.outer; ++o) {
        T* row = dst + o * s.inner;
        const T* base = src + o * s.extent * s.inner;
        for (std::size_t e = 0; e < s.extent; ++e) {
            const T* slice = base + e * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) row[i] += slice[i];
        }
        for (std::size_t i = 0; i < s.inner; ++i) row[i] *= inv;
    }
    return a.tape->record("mean_axis", std::move(out), {a}, [a, s, inv](Tape<T>& t, const Tensor<T>& g) {
        T* ga = t.grad_buffer(a.id).ptr();
        const T* gd = g.ptr();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t e = 0; e < s.extent; ++e) {
                T* slice = ga + (o * s.extent + e) * s.inner;
                const T* grow = gd + o * s.inner;
                for (std::size_t i = 0; i < s.inner; ++i) slice[i] += grow[i] * inv;
            }
        }
    });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (av.rank() < 2 || av.rank() != bv.rank()) {
        throw ShapeError("concat_channels: incompatible ranks " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
    }
    for (std::size_t i = 0; i < av.rank(); ++i) {
        if (i != 1 && av.shape()[i] != bv.shape()[i]) {
            throw ShapeError("concat_channels: non-channel extent mismatch " + shape_str(av.shape()) + " vs " +
                             shape_str(bv.shape()));
        }
    }
    Shape out_shape = av.shape();
    out_shape[1] += bv.shape()[1];
    const std::size_t batch = av.shape()[0];
    const std::size_t chunk_a = av.numel() / std::max<std::size_t>(batch, 1);
    const std::size_t chunk_b = bv.numel() / std::max<std::size_t>(batch, 1);
    Tensor<T> out(out_shape);
    for (std::size_t n = 0; n < batch; ++n) {
        T* dst = out.ptr() + n * (chunk_a + chunk_b);
        std::copy_n(av.ptr() + n * chunk_a, chunk_a, dst);
        std::copy_n(bv.ptr() + n * chunk_b, chunk_b, dst + chunk_a);
    }
    return a.tape->record("concat_channels", std::move(out), {a, b},
                          [a, b, batch, chunk_a, chunk_b](Tape<T>& t, const Tensor<T>& g) {
                              for (std::size_t n = 0; n < batch; ++n) {
                                  const T* src = g.ptr() + n * (chunk_a + chunk_b);
                                  if (t.requires_grad(a)) {
                                      T* ga = t.grad_buffer(a.id).ptr() + n * chunk_a;
                                      for (std::size_t i = 0; i < chunk_a; ++i) ga[i] += src[i];
                                  }
                                  if (t.requires_grad(b)) {
                                      T* gb = t.grad_buffer(b.id).ptr() + n * chunk_b;
                                      for (std::size_t i = 0; i < chunk_b; ++i) gb[i] += src[chunk_a + i];
                                  }
                              }
                          });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
    Tensor<T> out = a.value().reshaped(std::move(shape));
    return a.tape->record("reshape", std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
        accumulate(t.grad_buffer(a.id), g.reshaped(t.value(a.id).shape()));
    });
}

namespace {

// dst[out_index] = src[permuted index]; dst has shape src.shape permuted.
template <typename T>
void permute_into(const T* src, const Shape& src_shape, const std::vector<std::size_t>& perm, T* dst,
                  bool accumulate_dst) {
    const std::size_t rank = src_shape.size();
    const auto src_strides = row_major_strides(src_shape);
    Shape dst_shape(rank);
    std::vector<std::size_t> strides(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        dst_shape[i] = src_shape[perm[i]];
        strides[i] = src_strides[perm[i]];
    }
    if (accumulate_dst) {
        for_each_broadcast(dst_shape, strides, [&](std::size_t o, std::size_t i) { dst[o] += src[i]; });
    } else {
        for_each_broadcast(dst_shape, strides, [&](std::size_t o, std::size_t i) { dst[o] = src[i]; });
    }
}

}  // namespace

template <typename T>
Var<T> permute(Var<T> a, std::vector<std::size_t> perm) {
    const Tensor<T>& av = a.value();
    const std::size_t rank = av.rank();
    if (perm.size() != rank) throw ShapeError("permute: permutation rank mismatch");
    std::vector<std::size_t> inverse(rank, rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (perm[i] >= rank || inverse[perm[i]] != rank) throw ShapeError("permute: invalid permutation");
        inverse[perm[i]] = i;
    }
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) out_shape[i] = av.shape()[perm[i]];
    Tensor<T> out(out_shape);
    permute_into(av.ptr(), av.shape(), perm, out.ptr(), false);
    return a.tape->record("permute", std::move(out), {a}, [a, inverse](Tape<T>& t, const Tensor<T>& g) {
        permute_into(g.ptr(), g.shape(), inverse, t.grad_buffer(a.id).ptr(), true);
    });
}

template <typename T>
Var<T> expand(Var<T> a, Shape shape) {
    const Tensor<T>& av = a.value();
    auto strides = broadcast_strides(av.shape(), shape, "expand");
    Tensor<T> out(shape);
    const T* src = av.ptr();
    T* dst = out.ptr();
    for_each_broadcast(shape, strides, [&](std::size_t o, std::size_t i) { dst[o] = src[i]; });
    return a.tape->record("expand", std::move(out), {a}, [a, strides](Tape<T>& t, const Tensor<T>& g) {
        T* ga = t.grad_buffer(a.id).ptr();
        const T* gd = g.ptr();
        for_each_broadcast(g.shape(), strides, [&](std::size_t o, std::size_t i) { ga[i] += gd[o]; });
    });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool ta, bool tb) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (av.rank() < 2 || av.rank() != bv.rank()) {
        throw ShapeError("matmul: rank mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    }
    const std::size_t r = av.rank();
    for (std::size_t i = 0; i + 2 < r; ++i) {
        if (av.shape()[i] != bv.shape()[i]) {
            throw ShapeError("matmul: batch extents differ " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
        }
    }
    const std::size_t a_rows = av.shape()[r - 2], a_cols = av.shape()[r - 1];
    const std::size_t b_rows = bv.shape()[r - 2], b_cols = bv.shape()[r - 1];
    const std::size_t m = ta ? a_cols : a_rows;
    const std::size_t k = ta ? a_rows : a_cols;
    const std::size_t kb = tb ? b_cols : b_rows;
    const std::size_t n = tb ? b_rows : b_cols;
    if (k != kb) {
        throw ShapeError("matmul: inner extents differ " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    }
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < r; ++i) batch *= av.shape()[i];
    Shape out_shape = av.shape();
    out_shape[r - 2] = m;
    out_shape[r - 1] = n;
    Tensor<T> out(out_shape);
    const std::size_t sa = a_rows * a_cols, sb = b_rows * b_cols, sc = m * n;
    for (std::size_t i = 0; i < batch; ++i) {
        detail::gemm(ta, tb, m, n, k, T(1), av.ptr() + i * sa, a_cols, bv.ptr() + i * sb, b_cols, T(0),
                     out.ptr() + i * sc, n);
    }
    return a.tape->record(
        "matmul", std::move(out), {a, b},
        [=](Tape<T>& t, const Tensor<T>& g) {
            const Tensor<T>& av = t.value(a.id);
            const Tensor<T>& bv = t.value(b.id);
            for (std::size_t i = 0; i < batch; ++i) {
                const T* gi = g.ptr() + i * sc;
                const T* ai = av.ptr() + i * sa;
                const T* bi = bv.ptr() + i * sb;
                if (t.requires_grad(a)) {
                    T* ga = t.grad_buffer(a.id).ptr() + i * sa;
                    if (!ta) {
                        detail::gemm(false, !tb, m, k, n, T(1), gi, n, bi, b_cols, T(1), ga, a_cols);
                    } else {
                        detail::gemm(tb, true, k, m, n, T(1), bi, b_cols, gi, n, T(1), ga, a_cols);
                    }
                }
                if (t.requires_grad(b)) {
                    T* gb = t.grad_buffer(b.id).ptr() + i * sb;
                    if (!tb) {
                        detail::gemm(!ta, false, k, n, m, T(1), ai, a_cols, gi, n, T(1), gb, b_cols);
                    } else {
                        detail::gemm(true, ta, n, k, m, T(1), gi, n, ai, a_cols, T(1), gb, b_cols);
                    }
                }
            }
        });
}

#define SPECTRALCA_INSTANTIATE_CORE(T)                                            \
    template class Tape<T>;                                                       \
    template Var<T> add<T>(Var<T>, Var<T>);                                       \
    template Var<T> mul<T>(Var<T>, Var<T>);                                       \
    template Var<T> scale<T>(Var<T>, T);                                          \
    template Var<T> sum_all<T>(Var<T>);                                           \
    template Var<T> mean_all<T>(Var<T>);                                          \
    template Var<T> mean_axis<T>(Var<T>, std::size_t);                            \
    template Var<T> concat_channels<T>(Var<T>, Var<T>);                           \
    template Var<T> reshape<T>(Var<T>, Shape);                                    \
    template Var<T> permute<T>(Var<T>, std::vector<std::size_t>);                 \
    template Var<T> expand<T>(Var<T>, Shape);                                     \
    template Var<T> matmul<T>(Var<T>, Var<T>, bool, bool);

SPECTRALCA_INSTANTIATE_CORE(float)
SPECTRALCA_INSTANTIATE_CORE(double)

}  // namespace spectralca
