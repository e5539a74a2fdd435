#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spectralca/attention.hpp"
#include "spectralca/nn.hpp"

namespace spectralca {

/// Hyperparameters of one SpectralCA block. `channels` is the block's
/// input/output channel count C and `dim` the token embedding width d.
struct SpectralCAConfig {
    std::size_t channels = 64;
    std::size_t dim = 96;
    std::size_t heads = 4;
    double dropout = kDefaultDropout;

    /// "cfg32" -> (C=64, d=96), "cfg64" -> (C=128, d=120). The preset names
    /// follow the published labels; the dimensions are the ones the published
    /// parameter counts require.
    static SpectralCAConfig preset(std::string_view name);
    void validate() const;
};

/// Linear(d -> 2d) -> SiLU -> Dropout -> Linear(2d -> d).
template <typename T>
struct FeedForward {
    LinearLayer<T> up;
    LinearLayer<T> down;

    FeedForward() = default;
    FeedForward(const std::string& name, std::size_t dim, std::size_t hidden);

    void reset(Rng& rng) {
        up.reset(rng);
        down.reset(rng);
    }
    void collect(std::vector<Parameter<T>*>& out) {
        up.collect(out);
        down.collect(out);
    }
    Var<T> forward(Var<T> x, double dropout_rate, bool training, Rng* rng);
};

template <typename T>
using ParameterGroup = std::pair<std::string, std::vector<Parameter<T>*>>;

/// Spatial path (spectral mean -> Conv2D 3x3 -> BN -> SiLU -> H*W tokens ->
/// LayerNorm), spectral path (Conv3D 3x3x3 -> BN -> SiLU -> spatial pooling ->
/// D tokens -> LayerNorm), bi-directional cross-attention with residual and
/// feed-forward branches, then concat + 1x1x1 projection + global residual.
template <typename T>
class SpectralCABlock {
public:
    SpectralCABlock(const std::string& name, SpectralCAConfig config);

    const SpectralCAConfig& config() const { return config_; }

    void reset(Rng& rng);
    std::vector<Parameter<T>*> parameters();
    std::vector<Parameter<T>*> buffers();
    /// Trainable parameters grouped by component, in audit-table order.
    std::vector<ParameterGroup<T>> components();
    std::size_t parameter_count();

    /// [B, C, H, W, D] -> spatial tokens [B, H*W, d].
    Var<T> spatial_path(Var<T> x, bool training);
    /// [B, C, H, W, D] -> spectral tokens [B, D, d].
    Var<T> spectral_path(Var<T> x, bool training);
    /// [B, C, H, W, D] -> [B, C, H, W, D]. `rng` drives dropout in training mode.
    Var<T> forward(Var<T> x, bool training, Rng* rng = nullptr);

    Conv2DLayer<T> spatial_conv;
    BatchNormLayer<T> spatial_bn;
    Conv3DLayer<T> spectral_conv;
    BatchNormLayer<T> spectral_bn;
    CrossAttention<T> attention;
    LayerNormLayer<T> norm_spatial;
    LayerNormLayer<T> norm_spectral;
    LayerNormLayer<T> norm_spatial_ffn;
    LayerNormLayer<T> norm_spectral_ffn;
    FeedForward<T> ffn_spatial;
    FeedForward<T> ffn_spectral;
    Conv3DLayer<T> projector;

private:
    void check_input(const Shape& shape) const;

    SpectralCAConfig config_;
};

/// Closed-form trainable parameter counts per component.
struct SpectralCACounts {
    std::uint64_t spatial = 0;       // 9Cd + 3d
    std::uint64_t spectral = 0;      // 27Cd + 3d
    std::uint64_t attention = 0;     // 8(d^2 + d)
    std::uint64_t layer_norms = 0;   // 8d
    std::uint64_t ffn = 0;           // 4d^2 + 3d, each
    std::uint64_t projector = 0;     // 2dC + C
    std::uint64_t total() const { return spatial + spectral + attention + layer_norms + 2 * ffn + projector; }
};

SpectralCACounts closed_form_counts(const SpectralCAConfig& config);

struct AuditRow {
    std::string component;
    std::string description;
    std::uint64_t closed_form = 0;
    std::uint64_t enumerated = 0;
};

struct AuditTable {
    SpectralCAConfig config;
    std::vector<AuditRow> rows;
    std::uint64_t total = 0;
};

/// Raised when the closed-form and enumerated counts disagree.
class AuditMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Counts every component twice: by closed form and by enumerating the
/// elements of an allocated block. Throws AuditMismatch on disagreement.
AuditTable param_audit(const SpectralCAConfig& config);

std::string format_audit(const AuditTable& table);

}  // namespace spectralca
