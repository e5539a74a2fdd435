#include "spectralca/spectralca_block.hpp"

#include <iomanip>
#include <sstream>

namespace spectralca {

SpectralCAConfig SpectralCAConfig::preset(std::string_view name) {
    if (name == "cfg32") return SpectralCAConfig{64, 96, 4, kDefaultDropout};
    if (name == "cfg64") return SpectralCAConfig{128, 120, 4, kDefaultDropout};
    throw std::invalid_argument("unknown preset '" + std::string(name) + "' (expected cfg32 or cfg64)");
}

void SpectralCAConfig::validate() const {
    if (channels < 1) throw std::invalid_argument("SpectralCAConfig: channels must be >= 1");
    if (dim < 1 || heads < 1 || dim % heads != 0) {
        throw std::invalid_argument("SpectralCAConfig: heads (" + std::to_string(heads) + ") must divide dim (" +
                                    std::to_string(dim) + ")");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("SpectralCAConfig: dropout must be in [0, 1)");
}

template <typename T>
FeedForward<T>::FeedForward(const std::string& name, std::size_t dim, std::size_t hidden)
    : up(name + ".up", dim, hidden), down(name + ".down", hidden, dim) {}

template <typename T>
Var<T> FeedForward<T>::forward(Var<T> x, double dropout_rate, bool training, Rng* rng) {
    return linear(down, dropout(silu(linear(up, x)), dropout_rate, training, rng));
}

namespace {

const SpectralCAConfig& validated(const SpectralCAConfig& c) {
    c.validate();
    return c;
}

}  // namespace

template <typename T>
SpectralCABlock<T>::SpectralCABlock(const std::string& name, SpectralCAConfig config)
    : spatial_conv(name + ".spatial.conv", validated(config).channels, config.dim),
      spatial_bn(name + ".spatial.bn", config.dim),
      spectral_conv(name + ".spectral.conv", config.channels, config.dim, 3),
      spectral_bn(name + ".spectral.bn", config.dim),
      attention(name + ".attention", config.dim, config.heads),
      norm_spatial(name + ".norm_spatial", config.dim),
      norm_spectral(name + ".norm_spectral", config.dim),
      norm_spatial_ffn(name + ".norm_spatial_ffn", config.dim),
      norm_spectral_ffn(name + ".norm_spectral_ffn", config.dim),
      ffn_spatial(name + ".ffn_spatial", config.dim, 2 * config.dim),
      ffn_spectral(name + ".ffn_spectral", config.dim, 2 * config.dim),
      projector(name + ".projector", 2 * config.dim, config.channels, 1),
      config_(config) {}

template <typename T>
void SpectralCABlock<T>::reset(Rng& rng) {
    spatial_conv.reset(rng);
    spectral_conv.reset(rng);
    attention.reset(rng);
    ffn_spatial.reset(rng);
    ffn_spectral.reset(rng);
    projector.reset(rng);
}

template <typename T>
std::vector<ParameterGroup<T>> SpectralCABlock<T>::components() {
    std::vector<ParameterGroup<T>> groups;
    auto add = [&groups](std::string label, auto&&... layers) {
        std::vector<Parameter<T>*> ps;
        (layers.collect(ps), ...);
        groups.emplace_back(std::move(label), std::move(ps));
    };
    add("spatial", spatial_conv, spatial_bn);
    add("spectral", spectral_conv, spectral_bn);
    add("attention", attention);
    add("layer_norms", norm_spatial, norm_spectral, norm_spatial_ffn, norm_spectral_ffn);
    add("ffn_spatial", ffn_spatial);
    add("ffn_spectral", ffn_spectral);
    add("projector", projector);
    return groups;
}

template <typename T>
std::vector<Parameter<T>*> SpectralCABlock<T>::parameters() {
    std::vector<Parameter<T>*> all;
    for (auto& [label, ps] : components()) all.insert(all.end(), ps.begin(), ps.end());
    return all;
}

template <typename T>
std::vector<Parameter<T>*> SpectralCABlock<T>::buffers() {
    std::vector<Parameter<T>*> out;
    spatial_bn.collect_buffers(out);
    spectral_bn.collect_buffers(out);
    return out;
}

template <typename T>
std::size_t SpectralCABlock<T>::parameter_count() {
    std::size_t n = 0;
    for (Parameter<T>* p : parameters()) n += p->value.numel();
    return n;
}

template <typename T>
void SpectralCABlock<T>::check_input(const Shape& shape) const {
    if (shape.size() != 5) throw ShapeError("SpectralCA: expected [B,C,H,W,D], got " + shape_str(shape));
    if (shape[1] != config_.channels) {
        throw ShapeError("SpectralCA: input has " + std::to_string(shape[1]) + " channels, block expects " +
                         std::to_string(config_.channels));
    }
    for (std::size_t e : shape) {
        if (e == 0) throw ShapeError("SpectralCA: zero extent in " + shape_str(shape));
    }
}

template <typename T>
Var<T> SpectralCABlock<T>::spatial_path(Var<T> x, bool training) {
    const Shape s = x.shape();
    check_input(s);
    const std::size_t b = s[0], h = s[2], w = s[3], d = config_.dim;
    Var<T> collapsed = mean_axis(x, 4);  // [B, C, H, W]
    Var<T> features = silu(batch_norm(spatial_bn, conv2d(spatial_conv, collapsed), training));
    Var<T> tokens = permute(reshape(features, Shape{b, d, h * w}), {0, 2, 1});
    return layer_norm(norm_spatial, tokens);
}

template <typename T>
Var<T> SpectralCABlock<T>::spectral_path(Var<T> x, bool training) {
    const Shape s = x.shape();
    check_input(s);
    const std::size_t b = s[0], h = s[2], w = s[3], bands = s[4], d = config_.dim;
    Var<T> features = silu(batch_norm(spectral_bn, conv3d(spectral_conv, x), training));
    Var<T> pooled = mean_axis(reshape(features, Shape{b, d, h * w, bands}), 2);  // [B, d, D]
    return layer_norm(norm_spectral, permute(pooled, {0, 2, 1}));
}

template <typename T>
Var<T> SpectralCABlock<T>::forward(Var<T> x, bool training, Rng* rng) {
    const Shape s = x.shape();
    check_input(s);
    const std::size_t b = s[0], h = s[2], w = s[3], bands = s[4], d = config_.dim;
    const double rate = config_.dropout;

    Var<T> spatial = spatial_path(x, training);
    Var<T> spectral = spectral_path(x, training);
    CrossAttentionOutput<T> att = cross_attend(attention, spatial, spectral);

    Var<T> s1 = add(spatial, dropout(att.spatial, rate, training, rng));
    Var<T> s2 = add(s1, ffn_spatial.forward(layer_norm(norm_spatial_ffn, s1), rate, training, rng));
    Var<T> p1 = add(spectral, dropout(att.spectral, rate, training, rng));
    Var<T> p2 = add(p1, ffn_spectral.forward(layer_norm(norm_spectral_ffn, p1), rate, training, rng));

    const Shape volume{b, d, h, w, bands};
    Var<T> spatial_map = expand(reshape(permute(s2, {0, 2, 1}), Shape{b, d, h, w, 1}), volume);
    Var<T> spectral_map = expand(reshape(permute(p2, {0, 2, 1}), Shape{b, d, 1, 1, bands}), volume);
    Var<T> fused = concat_channels(spatial_map, spectral_map);  // [B, 2d, H, W, D]
    return add(conv3d(projector, fused), x);
}

template class SpectralCABlock<float>;
template class SpectralCABlock<double>;
template struct FeedForward<float>;
template struct FeedForward<double>;

SpectralCACounts closed_form_counts(const SpectralCAConfig& config) {
    config.validate();
    const std::uint64_t c = config.channels;
    const std::uint64_t d = config.dim;
    SpectralCACounts k;
    k.spatial = 9 * c * d + 3 * d;
    k.spectral = 27 * c * d + 3 * d;
    k.attention = 8 * (d * d + d);
    k.layer_norms = 8 * d;
    k.ffn = 4 * d * d + 3 * d;
    k.projector = 2 * d * c + c;
    return k;
}

AuditTable param_audit(const SpectralCAConfig& config) {
    const SpectralCACounts k = closed_form_counts(config);
    SpectralCABlock<float> block("block", config);
    const std::vector<std::pair<std::string, std::uint64_t>> expected{
        {"spatial", k.spatial},         {"spectral", k.spectral},   {"attention", k.attention},
        {"layer_norms", k.layer_norms}, {"ffn_spatial", k.ffn},     {"ffn_spectral", k.ffn},
        {"projector", k.projector},
    };
    const std::vector<std::pair<std::string, std::string>> labels{
        {"Spatial Conv Block", "Conv2D + BatchNorm + SiLU, 3x3 kernel"},
        {"Spectral Conv Block", "Conv3D + BatchNorm + SiLU, 3x3x3 kernel"},
        {"Cross-Attention (2 directions)", "6x Linear + 2x Linear out"},
        {"LayerNorm x4", "Normalization for both paths"},
        {"FFN for Spatial features", "2x Linear, SiLU, Dropout"},
        {"FFN for Spectral features", "2x Linear, SiLU, Dropout"},
        {"Output Projector", "Conv3D (1x1x1) for channel restoration"},
    };
    auto groups = block.components();
    if (groups.size() != expected.size()) throw AuditMismatch("component list does not match audit rows");

    AuditTable table;
    table.config = config;
    std::uint64_t enumerated_total = 0;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        std::uint64_t n = 0;
        for (Parameter<float>* p : groups[i].second) n += p->value.numel();
        if (groups[i].first != expected[i].first || n != expected[i].second) {
            throw AuditMismatch("component '" + groups[i].first + "': enumerated " + std::to_string(n) +
                                " != closed form " + std::to_string(expected[i].second));
        }
        table.rows.push_back(AuditRow{labels[i].first, labels[i].second, expected[i].second, n});
        enumerated_total += n;
    }
    if (enumerated_total != k.total()) {
        throw AuditMismatch("total: enumerated " + std::to_string(enumerated_total) + " != closed form " +
                            std::to_string(k.total()));
    }
    table.total = enumerated_total;
    return table;
}

std::string format_audit(const AuditTable& table) {
    std::ostringstream os;
    os << "SpectralCA parameter audit (C=" << table.config.channels << ", d=" << table.config.dim
       << ", h=" << table.config.heads << ")\n";
    os << std::left << std::setw(32) << "component" << std::setw(42) << "description" << std::right
       << std::setw(12) << "params" << '\n';
    for (const AuditRow& r : table.rows) {
        os << std::left << std::setw(32) << r.component << std::setw(42) << r.description << std::right
           << std::setw(12) << r.enumerated << '\n';
    }
    os << std::left << std::setw(74) << "Total" << std::right << std::setw(12) << table.total << '\n';
    return os.str();
}

}  // namespace spectralca
