#include "spectralca/gradcheck_suite.hpp"

#include <cmath>
#include <random>

#include "spectralca/classifier.hpp"

namespace spectralca {

namespace {

void fill_uniform(Tensor<double>& t, Rng& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& v : t.data()) v = u(rng);
}

Tensor<double> uniform(const Shape& shape, Rng& rng, double scale) {
    Tensor<double> t(shape);
    fill_uniform(t, rng, scale);
    return t;
}

void randomize(const std::vector<Parameter<double>*>& params, Rng& rng, double scale) {
    for (Parameter<double>* p : params) fill_uniform(p->value, rng, scale);
}

// mean(y * u) keeps |f| well below one, so a single rounding step in f stays
// inside the absolute floor of the relative-error metric.
constexpr double kKinkMargin = 1e-3;

Var<double> probe(Var<double> y, const Tensor<double>& u) { return mean_all(mul(y, y.tape->constant(u))); }

GradCheckReport check_nn(Rng& rng, const GradCheckOptions& opt) {
    Conv3DLayer<double> c3("conv3d", 2, 3, 3);
    Conv3DLayer<double> c1("pointwise", 3, 2, 1);
    Conv2DLayer<double> c2("conv2d", 2, 3);
    BatchNormLayer<double> bn("batch_norm", 2);
    LayerNormLayer<double> ln("layer_norm", 4);
    LinearLayer<double> lin("linear", 4, 3);
    std::vector<Parameter<double>*> ps{&c3.weight, &c3.bias, &c1.weight, &c1.bias, &c2.weight, &c2.bias,
                                       &bn.gamma,  &bn.beta, &ln.gamma,  &ln.beta,  &lin.weight, &lin.bias};
    randomize(ps, rng, 0.5);
    const auto x = uniform({2, 2, 3, 3, 4}, rng, 1.0);
    const auto x2 = uniform({2, 2, 3, 3}, rng, 1.0);
    const auto u = uniform({2, 3}, rng, 1.0);
    const std::vector<std::size_t> labels{0, 2};
    auto f = [&](Tape<double>& t) {
        auto a = silu(conv3d(c3, batch_norm(bn, t.constant(x), true)));
        auto b = silu(conv3d(c1, a));
        auto tokens = reshape(permute(b, {0, 2, 3, 1, 4}), Shape{2, 18, 4});
        auto n = layer_norm(ln, tokens);
        auto logits = linear(lin, add(mean_axis(softmax(n, 2), 1), mean_axis(n, 1)));
        auto s2 = mean_all(mul(conv2d(c2, t.constant(x2)), conv2d(c2, t.constant(x2))));
        return add(add(scale(cross_entropy(logits, labels), 0.1), probe(logits, u)), scale(s2, 0.1));
    };
    return grad_check(f, ps, opt);
}

GradCheckReport check_attention(Rng& rng, const GradCheckOptions& opt) {
    CrossAttention<double> ca("attention", 8, 2);
    std::vector<Parameter<double>*> ps;
    ca.collect(ps);
    randomize(ps, rng, 0.3);
    Parameter<double> s("spatial_tokens", uniform({2, 5, 8}, rng, 1.0));
    Parameter<double> p("spectral_tokens", uniform({2, 3, 8}, rng, 1.0));
    ps.insert(ps.begin(), {&s, &p});
    const auto u1 = uniform({2, 5, 8}, rng, 1.0);
    const auto u2 = uniform({2, 3, 8}, rng, 1.0);
    auto f = [&](Tape<double>& t) {
        auto out = cross_attend(ca, t.param(s), t.param(p));
        return add(probe(out.spatial, u1), probe(out.spectral, u2));
    };
    return grad_check(f, ps, opt);
}

GradCheckReport check_block(Rng& rng, const GradCheckOptions& opt, const SpectralCAConfig& cfg, const Shape& shape) {
    SpectralCABlock<double> block("block", cfg);
    randomize(block.parameters(), rng, 0.2);
    Parameter<double> x("input", uniform(shape, rng, 0.5));
    const auto u = uniform(shape, rng, 1.0);
    std::vector<Parameter<double>*> ps{&x};
    for (Parameter<double>* q : block.parameters()) ps.push_back(q);
    auto f = [&](Tape<double>& t) { return probe(block.forward(t.param(x), true), u); };
    return grad_check(f, ps, opt);
}

GradCheckReport check_classifier(Rng& rng, const GradCheckOptions& opt) {
    ModelConfig c;
    c.num_classes = 3;
    c.patch = 5;
    c.bands = 8;
    c.stem_channels = 3;
    c.block1_dim = 4;
    c.heads = 2;
    c.dropout = 0.0;
    Classifier<double> model(c, rng());
    Tensor<double> x;
    // redraw until no stem ReLU input sits within reach of a finite-difference step
    for (int attempt = 0; attempt < 100; ++attempt) {
        randomize(model.parameters(), rng, 0.3);
        x = uniform(c.input_shape(2), rng, 1.0);
        Tape<double> t(false);
        const auto z = batch_norm(model.stem_bn, conv3d(model.stem, t.constant(x)), true).value();
        double nearest = INFINITY;
        for (double v : z.data()) nearest = std::min(nearest, std::abs(v));
        if (nearest > kKinkMargin) break;
    }
    const auto u = uniform({2, 3}, rng, 1.0);
    auto f = [&](Tape<double>& t) { return probe(model.forward(t.constant(x), true), u); };
    return grad_check(f, model.parameters(), opt);
}

}  // namespace

std::vector<ModuleGradCheck> gradcheck_suite(std::uint64_t seed, bool include_cfg32, const GradCheckOptions& options) {
    GradCheckOptions opt = options;
    opt.seed = seed;
    std::vector<ModuleGradCheck> out;
    Rng rng(seed);
    out.push_back({"nn_ops", check_nn(rng, opt)});
    out.push_back({"attention", check_attention(rng, opt)});
    out.push_back({"spectralca", check_block(rng, opt, {3, 8, 2, 0.0}, {2, 3, 3, 2, 4})});
    out.push_back({"classifier", check_classifier(rng, opt)});
    if (include_cfg32) {
        SpectralCAConfig cfg = SpectralCAConfig::preset("cfg32");
        cfg.dropout = 0.0;
        out.push_back({"spectralca_cfg32", check_block(rng, opt, cfg, {2, cfg.channels, 2, 2, 3})});
    }
    return out;
}

void to_json(nlohmann::json& j, const ModuleGradCheck& m) {
    nlohmann::json params = nlohmann::json::array();
    for (const ParameterCheck& p : m.report.parameters) {
        params.push_back({{"name", p.name},
                          {"checked", p.checked},
                          {"max_rel_error", p.max_rel_error},
                          {"worst_analytic", p.worst_analytic},
                          {"worst_numeric", p.worst_numeric}});
    }
    j = nlohmann::json{{"module", m.module},
                       {"max_rel_error", m.report.max_rel_error},
                       {"tolerance", m.report.tolerance},
                       {"passed", m.report.passed()},
                       {"parameters", params}};
}

}  // namespace spectralca
