#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spectralca/spectralca_block.hpp"

namespace spectralca {

/// Patch classifier: Conv3d stem (1 -> stem_channels, 3x3x3) + BN + ReLU,
/// SpectralCA block, [depth 2: Conv3d mid (stem -> mid, 3x3x3) + BN + ReLU,
/// second SpectralCA block], global average pool, linear head.
struct ModelConfig {
    std::size_t depth = 1;
    std::size_t num_classes = 4;
    std::size_t patch = 9;
    std::size_t bands = 32;
    std::size_t stem_channels = 64;
    std::size_t block1_dim = 96;
    std::size_t mid_channels = 128;
    std::size_t block2_dim = 120;
    std::size_t heads = 4;
    double dropout = kDefaultDropout;

    void validate() const;
    SpectralCAConfig block1() const { return {stem_channels, block1_dim, heads, dropout}; }
    SpectralCAConfig block2() const { return {mid_channels, block2_dim, heads, dropout}; }
    std::size_t feature_channels() const { return depth == 2 ? mid_channels : stem_channels; }
    Shape input_shape(std::size_t batch) const { return {batch, 1, patch, patch, bands}; }

    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename T>
class Classifier {
public:
    Classifier(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }

    /// patches [B, 1, p, p, D] -> logits [B, num_classes].
    Var<T> forward(Var<T> patches, bool training, Rng* rng = nullptr);

    std::vector<Parameter<T>*> parameters();
    std::vector<Parameter<T>*> buffers();
    /// Parameters followed by buffers, in checkpoint order.
    std::vector<Parameter<T>*> state();
    std::size_t parameter_count();

    Conv3DLayer<T> stem;
    BatchNormLayer<T> stem_bn;
    SpectralCABlock<T> block1;
    std::optional<Conv3DLayer<T>> mid;
    std::optional<BatchNormLayer<T>> mid_bn;
    std::optional<SpectralCABlock<T>> block2;
    LinearLayer<T> head;

private:
    ModelConfig config_;
    std::uint64_t seed_;
};

/// Eval-mode softmax probabilities [B, num_classes].
template <typename T>
Tensor<T> predict_proba(Classifier<T>& model, const Tensor<T>& patches);

/// Eval-mode logits [B, num_classes].
template <typename T>
Tensor<T> predict_logits(Classifier<T>& model, const Tensor<T>& patches);

struct ModelAuditRow {
    std::string component;
    std::uint64_t closed_form = 0;
    std::uint64_t enumerated = 0;
};

/// Stem, mid and head rows by closed form and enumeration, plus block totals.
struct ModelAudit {
    std::vector<ModelAuditRow> rows;
    std::uint64_t total = 0;
};

ModelAudit model_audit(const ModelConfig& config);

}  // namespace spectralca
