#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spectralca/autodiff.hpp"

namespace spectralca {

using Rng = std::mt19937_64;

inline constexpr double kNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kDefaultDropout = 0.1;

/// Fills `p` from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), i.e. Kaiming-uniform
/// with negative slope sqrt(5).
template <typename T>
void kaiming_uniform(Parameter<T>& p, std::size_t fan_in, Rng& rng);

template <typename T>
struct LinearLayer {
    Parameter<T> weight;  // [out, in]
    Parameter<T> bias;    // [out]

    LinearLayer() = default;
    LinearLayer(const std::string& name, std::size_t in, std::size_t out);

    std::size_t in_features() const { return weight.value.shape()[1]; }
    std::size_t out_features() const { return weight.value.shape()[0]; }
    void reset(Rng& rng);
    void collect(std::vector<Parameter<T>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

/// Same-padded 3x3 convolution over [B, C, H, W], stride 1.
template <typename T>
struct Conv2DLayer {
    Parameter<T> weight;  // [C_out, C_in, 3, 3]
    Parameter<T> bias;    // [C_out]

    Conv2DLayer() = default;
    Conv2DLayer(const std::string& name, std::size_t in, std::size_t out);

    void reset(Rng& rng);
    void collect(std::vector<Parameter<T>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

/// Same-padded k x k x k convolution over [B, C, H, W, D], k in {1, 3}.
template <typename T>
struct Conv3DLayer {
    Parameter<T> weight;  // [C_out, C_in, k, k, k]
    Parameter<T> bias;    // [C_out]

    Conv3DLayer() = default;
    Conv3DLayer(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel);

    std::size_t kernel() const { return weight.value.shape()[2]; }
    void reset(Rng& rng);
    void collect(std::vector<Parameter<T>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

/// Per-channel normalization over every non-channel axis. gamma and beta are
/// trainable; the running statistics are buffers.
template <typename T>
struct BatchNormLayer {
    Parameter<T> gamma;
    Parameter<T> beta;
    Parameter<T> running_mean;
    Parameter<T> running_var;
    T momentum = T(kBatchNormMomentum);
    T eps = T(kNormEps);

    BatchNormLayer() = default;
    BatchNormLayer(const std::string& name, std::size_t channels);

    void collect(std::vector<Parameter<T>*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
    void collect_buffers(std::vector<Parameter<T>*>& out) {
        out.push_back(&running_mean);
        out.push_back(&running_var);
    }
};

/// Normalization over the last axis of a token tensor.
template <typename T>
struct LayerNormLayer {
    Parameter<T> gamma;
    Parameter<T> beta;
    T eps = T(kNormEps);

    LayerNormLayer() = default;
    LayerNormLayer(const std::string& name, std::size_t dim);

    void collect(std::vector<Parameter<T>*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

// ---------------------------------------------------------------------------
// Functional forms (weights as tape values).

/// x [B, C_in, H, W, D], w [C_out, C_in, kh, kw, kd] (odd extents), b [C_out].
template <typename T>
Var<T> conv3d(Var<T> x, Var<T> w, Var<T> b);

/// x [B, C_in, H, W], w [C_out, C_in, kh, kw], b [C_out].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b);

/// x [..., in], w [out, in], b [out].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b);

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(kNormEps));

template <typename T>
Var<T> silu(Var<T> x);

template <typename T>
Var<T> relu(Var<T> x);

template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis);

/// Inverted dropout: zeroes with probability `rate`, scales survivors by 1/(1-rate).
/// Identity when not training or rate == 0.
template <typename T>
Var<T> dropout(Var<T> x, double rate, bool training, Rng* rng);

/// Mean over the batch of -log softmax(logits)[label]; labels are 0-based.
template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<std::size_t>& labels);

// ---------------------------------------------------------------------------
// Layer forms.

template <typename T>
Var<T> linear(LinearLayer<T>& layer, Var<T> x);

template <typename T>
Var<T> conv2d(Conv2DLayer<T>& layer, Var<T> x);

template <typename T>
Var<T> conv3d(Conv3DLayer<T>& layer, Var<T> x);

template <typename T>
Var<T> layer_norm(LayerNormLayer<T>& layer, Var<T> x);

/// Training mode normalizes with batch statistics and updates the running
/// statistics; eval mode uses the running statistics.
template <typename T>
Var<T> batch_norm(BatchNormLayer<T>& layer, Var<T> x, bool training);

}  // namespace spectralca
