#include "spectralca/baseline.hpp"

namespace spectralca {

template <typename T>
TransformerLayer<T>::TransformerLayer(const std::string& name, std::size_t dim)
    : norm_attention(name + ".norm_attention", dim),
      query(name + ".query", dim, dim),
      key(name + ".key", dim, dim),
      value(name + ".value", dim, dim),
      output(name + ".output", dim, dim),
      norm_ffn(name + ".norm_ffn", dim),
      ffn(name + ".ffn", dim, 2 * dim) {}

template <typename T>
void TransformerLayer<T>::reset(Rng& rng) {
    query.reset(rng);
    key.reset(rng);
    value.reset(rng);
    output.reset(rng);
    ffn.reset(rng);
}

template <typename T>
void TransformerLayer<T>::collect(std::vector<Parameter<T>*>& out) {
    norm_attention.collect(out);
    query.collect(out);
    key.collect(out);
    value.collect(out);
    output.collect(out);
    norm_ffn.collect(out);
    ffn.collect(out);
}

template <typename T>
Var<T> TransformerLayer<T>::forward(Var<T> tokens, std::size_t heads, double dropout_rate, bool training, Rng* rng) {
    Var<T> n1 = layer_norm(norm_attention, tokens);
    auto [context, weights] = multi_head_attention(linear(query, n1), linear(key, n1), linear(value, n1), heads);
    Var<T> x = add(tokens, dropout(linear(output, context), dropout_rate, training, rng));
    return add(x, ffn.forward(layer_norm(norm_ffn, x), dropout_rate, training, rng));
}

template <typename T>
BaselineViTBlock<T>::BaselineViTBlock(const std::string& name, SpectralCAConfig config)
    : local_conv(name + ".local.conv", config.channels, config.channels, 3),
      local_bn(name + ".local.bn", config.channels),
      tokenizer(name + ".tokenizer", config.channels, config.dim, 1),
      projection(name + ".projection", config.dim, config.channels, 1),
      fusion(name + ".fusion", 2 * config.channels, config.channels, 3),
      config_(config) {
    config_.validate();
    for (std::size_t i = 0; i < kLayers; ++i) layers.emplace_back(name + ".layers." + std::to_string(i), config.dim);
}

template <typename T>
void BaselineViTBlock<T>::reset(Rng& rng) {
    local_conv.reset(rng);
    tokenizer.reset(rng);
    for (auto& l : layers) l.reset(rng);
    projection.reset(rng);
    fusion.reset(rng);
}

template <typename T>
std::vector<Parameter<T>*> BaselineViTBlock<T>::parameters() {
    std::vector<Parameter<T>*> out;
    local_conv.collect(out);
    local_bn.collect(out);
    tokenizer.collect(out);
    for (auto& l : layers) l.collect(out);
    projection.collect(out);
    fusion.collect(out);
    return out;
}

template <typename T>
std::vector<Parameter<T>*> BaselineViTBlock<T>::buffers() {
    std::vector<Parameter<T>*> out;
    local_bn.collect_buffers(out);
    return out;
}

template <typename T>
std::size_t BaselineViTBlock<T>::parameter_count() {
    std::size_t n = 0;
    for (Parameter<T>* p : parameters()) n += p->value.numel();
    return n;
}

template <typename T>
Var<T> BaselineViTBlock<T>::forward(Var<T> x, bool training, Rng* rng) {
    const Shape s = x.shape();
    if (s.size() != 5 || s[1] != config_.channels) {
        throw ShapeError("BaselineViTBlock: expected [B," + std::to_string(config_.channels) + ",H,W,D], got " +
                         shape_str(s));
    }
    const std::size_t b = s[0], h = s[2], w = s[3], bands = s[4], d = config_.dim;
    Var<T> local = silu(batch_norm(local_bn, conv3d(local_conv, x), training));
    Var<T> embedded = conv3d(tokenizer, local);  // [B, d, H, W, D]
    // unfold: one sequence of H*W tokens per (sample, spectral index)
    Var<T> tokens = reshape(permute(embedded, {0, 4, 2, 3, 1}), Shape{b * bands, h * w, d});
    for (auto& layer : layers) tokens = layer.forward(tokens, config_.heads, config_.dropout, training, rng);
    Var<T> folded = permute(reshape(tokens, Shape{b, bands, h, w, d}), {0, 4, 2, 3, 1});
    Var<T> projected = conv3d(projection, folded);
    return add(conv3d(fusion, concat_channels(x, projected)), x);
}

template struct TransformerLayer<float>;
template struct TransformerLayer<double>;
template class BaselineViTBlock<float>;
template class BaselineViTBlock<double>;

}  // namespace spectralca
