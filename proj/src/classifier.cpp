#include "spectralca/classifier.hpp"

namespace spectralca {

void ModelConfig::validate() const {
    if (depth != 1 && depth != 2) throw std::invalid_argument("ModelConfig: depth must be 1 or 2");
    if (num_classes < 2) throw std::invalid_argument("ModelConfig: num_classes must be >= 2");
    if (patch == 0 || patch % 2 == 0) throw std::invalid_argument("ModelConfig: patch size must be odd");
    if (bands < 3) throw std::invalid_argument("ModelConfig: bands must be >= 3");
    if (stem_channels == 0 || mid_channels == 0) throw std::invalid_argument("ModelConfig: zero channel count");
    block1().validate();
    if (depth == 2) block2().validate();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"depth", c.depth},
                       {"num_classes", c.num_classes},
                       {"patch", c.patch},
                       {"bands", c.bands},
                       {"stem_channels", c.stem_channels},
                       {"block1_dim", c.block1_dim},
                       {"mid_channels", c.mid_channels},
                       {"block2_dim", c.block2_dim},
                       {"heads", c.heads},
                       {"dropout", c.dropout}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.depth = j.value("depth", d.depth);
    c.num_classes = j.value("num_classes", d.num_classes);
    c.patch = j.value("patch", d.patch);
    c.bands = j.value("bands", d.bands);
    c.stem_channels = j.value("stem_channels", d.stem_channels);
    c.block1_dim = j.value("block1_dim", d.block1_dim);
    c.mid_channels = j.value("mid_channels", d.mid_channels);
    c.block2_dim = j.value("block2_dim", d.block2_dim);
    c.heads = j.value("heads", d.heads);
    c.dropout = j.value("dropout", d.dropout);
}

namespace {

const ModelConfig& validated(const ModelConfig& c) {
    c.validate();
    return c;
}

}  // namespace

template <typename T>
Classifier<T>::Classifier(ModelConfig config, std::uint64_t seed)
    : stem("stem.conv", 1, validated(config).stem_channels, 3),
      stem_bn("stem.bn", config.stem_channels),
      block1("block1", config.block1()),
      head("head", config.feature_channels(), config.num_classes),
      config_(config),
      seed_(seed) {
    if (config.depth == 2) {
        mid.emplace("mid.conv", config.stem_channels, config.mid_channels, 3);
        mid_bn.emplace("mid.bn", config.mid_channels);
        block2.emplace("block2", config.block2());
    }
    Rng rng(seed);
    stem.reset(rng);
    block1.reset(rng);
    if (mid) {
        mid->reset(rng);
        block2->reset(rng);
    }
    head.reset(rng);
}

template <typename T>
std::vector<Parameter<T>*> Classifier<T>::parameters() {
    std::vector<Parameter<T>*> out;
    stem.collect(out);
    stem_bn.collect(out);
    for (Parameter<T>* p : block1.parameters()) out.push_back(p);
    if (mid) {
        mid->collect(out);
        mid_bn->collect(out);
        for (Parameter<T>* p : block2->parameters()) out.push_back(p);
    }
    head.collect(out);
    return out;
}

template <typename T>
std::vector<Parameter<T>*> Classifier<T>::buffers() {
    std::vector<Parameter<T>*> out;
    stem_bn.collect_buffers(out);
    for (Parameter<T>* p : block1.buffers()) out.push_back(p);
    if (mid) {
        mid_bn->collect_buffers(out);
        for (Parameter<T>* p : block2->buffers()) out.push_back(p);
    }
    return out;
}

template <typename T>
std::vector<Parameter<T>*> Classifier<T>::state() {
    auto out = parameters();
    for (Parameter<T>* p : buffers()) out.push_back(p);
    return out;
}

template <typename T>
std::size_t Classifier<T>::parameter_count() {
    std::size_t n = 0;
    for (Parameter<T>* p : parameters()) n += p->value.numel();
    return n;
}

template <typename T>
Var<T> Classifier<T>::forward(Var<T> patches, bool training, Rng* rng) {
    const Shape s = patches.shape();
    const Shape expected = config_.input_shape(s.empty() ? 0 : s[0]);
    if (s != expected || s[0] == 0) {
        throw ShapeError("Classifier: expected patches " + shape_str(expected) + ", got " + shape_str(s));
    }
    Var<T> x = relu(batch_norm(stem_bn, conv3d(stem, patches), training));
    x = block1.forward(x, training, rng);
    if (mid) {
        x = relu(batch_norm(*mid_bn, conv3d(*mid, x), training));
        x = block2->forward(x, training, rng);
    }
    const std::size_t b = s[0];
    const std::size_t c = config_.feature_channels();
    Var<T> pooled = mean_axis(reshape(x, Shape{b, c, config_.patch * config_.patch * config_.bands}), 2);
    return linear(head, pooled);
}

template <typename T>
Tensor<T> predict_logits(Classifier<T>& model, const Tensor<T>& patches) {
    Tape<T> tape(false);
    return model.forward(tape.constant(patches), false).value();
}

template <typename T>
Tensor<T> predict_proba(Classifier<T>& model, const Tensor<T>& patches) {
    Tape<T> tape(false);
    return softmax(model.forward(tape.constant(patches), false), 1).value();
}

template class Classifier<float>;
template class Classifier<double>;
template Tensor<float> predict_proba<float>(Classifier<float>&, const Tensor<float>&);
template Tensor<double> predict_proba<double>(Classifier<double>&, const Tensor<double>&);
template Tensor<float> predict_logits<float>(Classifier<float>&, const Tensor<float>&);
template Tensor<double> predict_logits<double>(Classifier<double>&, const Tensor<double>&);

ModelAudit model_audit(const ModelConfig& config) {
    Classifier<float> model(config, 0);
    ModelAudit audit;
    auto count = [](std::vector<Parameter<float>*> ps) {
        std::uint64_t n = 0;
        for (Parameter<float>* p : ps) n += p->value.numel();
        return n;
    };
    auto collected = [](auto& layer) {
        std::vector<Parameter<float>*> ps;
        layer.collect(ps);
        return ps;
    };
    const std::uint64_t s = config.stem_channels;
    const std::uint64_t m = config.mid_channels;
    const std::uint64_t f = config.feature_channels();
    const std::uint64_t k = config.num_classes;
    audit.rows.push_back({"stem.conv", 27 * s + s, count(collected(model.stem))});
    audit.rows.push_back({"stem.bn", 2 * s, count(collected(model.stem_bn))});
    audit.rows.push_back({"block1", closed_form_counts(config.block1()).total(), count(model.block1.parameters())});
    if (config.depth == 2) {
        audit.rows.push_back({"mid.conv", 27 * s * m + m, count(collected(*model.mid))});
        audit.rows.push_back({"mid.bn", 2 * m, count(collected(*model.mid_bn))});
        audit.rows.push_back(
            {"block2", closed_form_counts(config.block2()).total(), count(model.block2->parameters())});
    }
    audit.rows.push_back({"head", f * k + k, count(collected(model.head))});
    for (const ModelAuditRow& r : audit.rows) {
        if (r.closed_form != r.enumerated) {
            throw AuditMismatch("model component '" + r.component + "': enumerated " + std::to_string(r.enumerated) +
                                " != closed form " + std::to_string(r.closed_form));
        }
        audit.total += r.enumerated;
    }
    if (audit.total != model.parameter_count()) throw AuditMismatch("model audit rows do not cover every parameter");
    return audit;
}

}  // namespace spectralca
