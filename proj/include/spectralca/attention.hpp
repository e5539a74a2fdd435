#pragma once

#include <string>
#include <vector>

#include "spectralca/nn.hpp"

namespace spectralca {

/// Bi-directional multi-head cross-attention between spatial tokens S and
/// spectral tokens P. Six d->d projections (Q/K/V per stream) plus one d->d
/// output projection per direction: 8(d^2 + d) parameters.
template <typename T>
class CrossAttention {
public:
    CrossAttention() = default;
    CrossAttention(const std::string& name, std::size_t dim, std::size_t heads);

    std::size_t dim() const { return dim_; }
    std::size_t heads() const { return heads_; }
    std::size_t head_dim() const { return dim_ / heads_; }

    void reset(Rng& rng);
    void collect(std::vector<Parameter<T>*>& out);

    LinearLayer<T> q_spatial, k_spatial, v_spatial;
    LinearLayer<T> q_spectral, k_spectral, v_spectral;
    LinearLayer<T> out_spatial;   // spatial queries over spectral keys (Att1)
    LinearLayer<T> out_spectral;  // spectral queries over spatial keys (Att2)

private:
    std::size_t dim_ = 0;
    std::size_t heads_ = 1;
};

template <typename T>
struct CrossAttentionOutput {
    Var<T> spatial;           // [B, N_s, d]
    Var<T> spectral;          // [B, N_p, d]
    Var<T> spatial_weights;   // [B, h, N_s, N_p]
    Var<T> spectral_weights;  // [B, h, N_p, N_s]
};

/// Scaled dot-product attention with `heads` heads of contiguous features.
/// q [B, Nq, d], k/v [B, Nk, d] -> context [B, Nq, d] (before any output
/// projection) and weights [B, h, Nq, Nk].
template <typename T>
std::pair<Var<T>, Var<T>> multi_head_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads);

/// Att1 = softmax(Q_s K_p^T / sqrt(d_h)) V_p and Att2 = softmax(Q_p K_s^T / sqrt(d_h)) V_s,
/// each followed by its direction's output projection.
template <typename T>
CrossAttentionOutput<T> cross_attend(CrossAttention<T>& ca, Var<T> spatial, Var<T> spectral);

}  // namespace spectralca
