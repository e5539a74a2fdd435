#pragma once

#include <string>
#include <vector>

#include "spectralca/spectralca_block.hpp"

namespace spectralca {

/// Pre-norm transformer encoder layer: x + Attn(LN(x)), then x + FFN(LN(x)).
template <typename T>
struct TransformerLayer {
    LayerNormLayer<T> norm_attention;
    LinearLayer<T> query, key, value, output;
    LayerNormLayer<T> norm_ffn;
    FeedForward<T> ffn;

    TransformerLayer() = default;
    TransformerLayer(const std::string& name, std::size_t dim);

    void reset(Rng& rng);
    void collect(std::vector<Parameter<T>*>& out);
    Var<T> forward(Var<T> tokens, std::size_t heads, double dropout_rate, bool training, Rng* rng);
};

/// MobileViT-style comparator used for size/speed reporting: local 3x3x3
/// conv, pointwise tokenizer, self-attention over the H*W positions of every
/// spectral slice, fold back, pointwise projection, and a 3x3x3 fusion conv
/// over [input, projection] with a residual connection.
template <typename T>
class BaselineViTBlock {
public:
    static constexpr std::size_t kLayers = 2;

    BaselineViTBlock(const std::string& name, SpectralCAConfig config);

    const SpectralCAConfig& config() const { return config_; }
    void reset(Rng& rng);
    std::vector<Parameter<T>*> parameters();
    std::vector<Parameter<T>*> buffers();
    std::size_t parameter_count();

    Var<T> forward(Var<T> x, bool training, Rng* rng = nullptr);

    Conv3DLayer<T> local_conv;
    BatchNormLayer<T> local_bn;
    Conv3DLayer<T> tokenizer;
    std::vector<TransformerLayer<T>> layers;
    Conv3DLayer<T> projection;
    Conv3DLayer<T> fusion;

private:
    SpectralCAConfig config_;
};

}  // namespace spectralca
