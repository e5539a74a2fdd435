#include "spectralca/attention.hpp"

#include <cmath>

namespace spectralca {

template <typename T>
CrossAttention<T>::CrossAttention(const std::string& name, std::size_t dim, std::size_t heads)
    : q_spatial(name + ".q_spatial", dim, dim),
      k_spatial(name + ".k_spatial", dim, dim),
      v_spatial(name + ".v_spatial", dim, dim),
      q_spectral(name + ".q_spectral", dim, dim),
      k_spectral(name + ".k_spectral", dim, dim),
      v_spectral(name + ".v_spectral", dim, dim),
      out_spatial(name + ".out_spatial", dim, dim),
      out_spectral(name + ".out_spectral", dim, dim),
      dim_(dim),
      heads_(heads) {
    if (heads == 0 || dim % heads != 0) {
        throw std::invalid_argument("CrossAttention: heads (" + std::to_string(heads) + ") must divide dim (" +
                                    std::to_string(dim) + ")");
    }
}

template <typename T>
void CrossAttention<T>::reset(Rng& rng) {
    for (LinearLayer<T>* l : {&q_spatial, &k_spatial, &v_spatial, &q_spectral, &k_spectral, &v_spectral,
                              &out_spatial, &out_spectral}) {
        l->reset(rng);
    }
}

template <typename T>
void CrossAttention<T>::collect(std::vector<Parameter<T>*>& out) {
    for (LinearLayer<T>* l : {&q_spatial, &k_spatial, &v_spatial, &q_spectral, &k_spectral, &v_spectral,
                              &out_spatial, &out_spectral}) {
        l->collect(out);
    }
}

namespace {

// [B, N, d] -> [B, h, N, d/h]
template <typename T>
Var<T> split_heads(Var<T> x, std::size_t heads) {
    const Shape s = x.shape();
    return permute(reshape(x, Shape{s[0], s[1], heads, s[2] / heads}), {0, 2, 1, 3});
}

// [B, h, N, d/h] -> [B, N, d]
template <typename T>
Var<T> merge_heads(Var<T> x) {
    const Shape s = x.shape();
    return reshape(permute(x, {0, 2, 1, 3}), Shape{s[0], s[2], s[1] * s[3]});
}

}  // namespace

template <typename T>
std::pair<Var<T>, Var<T>> multi_head_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads) {
    const Shape qs = q.shape();
    const Shape ks = k.shape();
    if (qs.size() != 3 || ks.size() != 3 || v.shape() != ks || qs[0] != ks[0] || qs[2] != ks[2]) {
        throw ShapeError("attention: incompatible token tensors " + shape_str(qs) + ", " + shape_str(ks) + ", " +
                         shape_str(v.shape()));
    }
    if (heads == 0 || qs[2] % heads != 0) throw ShapeError("attention: heads must divide the embedding dim");
    const std::size_t head_dim = qs[2] / heads;
    Var<T> qh = split_heads(q, heads);
    Var<T> kh = split_heads(k, heads);
    Var<T> vh = split_heads(v, heads);
    Var<T> scores = scale(matmul(qh, kh, false, true), T(1) / std::sqrt(static_cast<T>(head_dim)));
    Var<T> weights = softmax(scores, 3);
    Var<T> context = merge_heads(matmul(weights, vh));
    return {context, weights};
}

template <typename T>
CrossAttentionOutput<T> cross_attend(CrossAttention<T>& ca, Var<T> spatial, Var<T> spectral) {
    const Shape ss = spatial.shape();
    const Shape ps = spectral.shape();
    if (ss.size() != 3 || ps.size() != 3 || ss[2] != ca.dim() || ps[2] != ca.dim() || ss[0] != ps[0]) {
        throw ShapeError("cross_attend: expected [B,N_s," + std::to_string(ca.dim()) + "] and [B,N_p," +
                         std::to_string(ca.dim()) + "], got " + shape_str(ss) + " and " + shape_str(ps));
    }
    if (ss[1] == 0 || ps[1] == 0) throw ShapeError("cross_attend: empty token set");
    Var<T> qs = linear(ca.q_spatial, spatial);
    Var<T> ks = linear(ca.k_spatial, spatial);
    Var<T> vs = linear(ca.v_spatial, spatial);
    Var<T> qp = linear(ca.q_spectral, spectral);
    Var<T> kp = linear(ca.k_spectral, spectral);
    Var<T> vp = linear(ca.v_spectral, spectral);

    auto [ctx1, w1] = multi_head_attention(qs, kp, vp, ca.heads());
    auto [ctx2, w2] = multi_head_attention(qp, ks, vs, ca.heads());
    return {linear(ca.out_spatial, ctx1), linear(ca.out_spectral, ctx2), w1, w2};
}

template class CrossAttention<float>;
template class CrossAttention<double>;
template std::pair<Var<float>, Var<float>> multi_head_attention<float>(Var<float>, Var<float>, Var<float>, std::size_t);
template std::pair<Var<double>, Var<double>> multi_head_attention<double>(Var<double>, Var<double>, Var<double>,
                                                                          std::size_t);
template CrossAttentionOutput<float> cross_attend<float>(CrossAttention<float>&, Var<float>, Var<float>);
template CrossAttentionOutput<double> cross_attend<double>(CrossAttention<double>&, Var<double>, Var<double>);

}  // namespace spectralca
