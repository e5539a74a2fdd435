#include "spectralca/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

namespace spectralca {

void TrainConfig::validate() const {
    if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("TrainConfig: learning_rate must be finite and >= 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("TrainConfig: betas must be in [0, 1)");
    }
    if (!(eps > 0.0)) throw std::invalid_argument("TrainConfig: eps must be > 0");
    if (target_oa && !(*target_oa > 0.0 && *target_oa <= 1.0)) {
        throw std::invalid_argument("TrainConfig: target_oa must be in (0, 1]");
    }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
                       {"beta1", c.beta1},   {"beta2", c.beta2},           {"eps", c.eps},
                       {"seed", c.seed},     {"eval_every", c.eval_every}};
    j["target_oa"] = c.target_oa ? nlohmann::json(*c.target_oa) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.eps = j.value("eps", d.eps);
    c.seed = j.value("seed", d.seed);
    c.eval_every = j.value("eval_every", d.eval_every);
    if (j.contains("target_oa") && !j.at("target_oa").is_null()) c.target_oa = j.at("target_oa").get<double>();
}

Adam::Adam(std::vector<Parameter<float>*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (Parameter<float>* p : params_) {
        m_.emplace_back(p->value.numel(), 0.0);
        v_.emplace_back(p->value.numel(), 0.0);
    }
}

void Adam::zero_grad() {
    for (Parameter<float>* p : params_) p->zero_grad();
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        float* w = params_[i]->value.ptr();
        const float* g = params_[i]->grad.ptr();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < m.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            const double update = lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
            w[j] = static_cast<float>(w[j] - update);
        }
    }
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
    j = nlohmann::json{{"epoch", r.epoch},
                       {"loss", r.loss},
                       {"acc", r.acc},
                       {"test_oa", r.test_oa ? nlohmann::json(*r.test_oa) : nlohmann::json(nullptr)}};
}

namespace {

constexpr std::uint64_t kDropoutStream = 0x9E3779B97F4A7C15ull;

std::size_t argmax_row(const float* row, std::size_t k) {
    return static_cast<std::size_t>(std::max_element(row, row + k) - row);
}

}  // namespace

TrainHistory train(Classifier<float>& model, const PatchSet& train_set, const TrainConfig& config,
                   const PatchSet* test_set, std::ostream* log) {
    config.validate();
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
    const std::size_t k = model.config().num_classes;
    for (const PatchEntry& e : train_set.entries) {
        if (e.label == kUnlabeled || e.label > k) {
            throw std::invalid_argument("train: label " + std::to_string(e.label) + " outside 1.." + std::to_string(k));
        }
    }
    Adam opt(model.parameters(), config.learning_rate, config.beta1, config.beta2, config.eps);
    Rng order_rng(config.seed);
    Rng dropout_rng(config.seed ^ kDropoutStream);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    TrainHistory history;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double loss_sum = 0;
        std::size_t correct = 0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            // batch norm needs two samples per channel; a lone trailing sample joins nothing
            if (end - start < 2 && order.size() >= 2) continue;
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(end));
            const std::vector<std::size_t> labels = batch_labels(train_set, idx);
            try {
                Tape<float> tape;
                Var<float> logits = model.forward(tape.constant(make_batch(train_set, idx)), true, &dropout_rng);
                Var<float> loss = cross_entropy(logits, labels);
                const double batch_loss = loss.value().item();
                if (epoch == 1 && batch_index == 0) history.first_batch_loss = batch_loss;
                const Tensor<float>& lv = logits.value();
                for (std::size_t i = 0; i < idx.size(); ++i) correct += argmax_row(lv.ptr() + i * k, k) == labels[i];
                loss_sum += batch_loss * static_cast<double>(idx.size());
                opt.zero_grad();
                tape.backward(loss);
                opt.step();
            } catch (const NonFiniteError& e) {
                throw NonFiniteError("training diverged at epoch " + std::to_string(epoch) + " batch " +
                                     std::to_string(batch_index) + ": " + e.what());
            }
        }
        EpochRecord rec;
        rec.epoch = epoch;
        const std::size_t seen = order.size() >= 2 ? order.size() - (order.size() % config.batch_size == 1 ? 1 : 0)
                                                   : order.size();
        rec.loss = loss_sum / static_cast<double>(seen);
        rec.acc = static_cast<double>(correct) / static_cast<double>(seen);
        if (test_set && config.eval_every > 0 && (epoch % config.eval_every == 0 || epoch == config.epochs)) {
            rec.test_oa = overall_accuracy(confusion(model, *test_set));
        }
        history.epochs.push_back(rec);
        if (log) {
            *log << nlohmann::json(rec).dump() << '\n';
            log->flush();
        }
        if (config.target_oa && rec.test_oa && *rec.test_oa >= *config.target_oa) break;
    }
    return history;
}

Prediction predict_with_confidence(Classifier<float>& model, const PatchSet& set, std::size_t batch_size) {
    if (batch_size == 0) throw std::invalid_argument("predict: batch_size must be >= 1");
    const std::size_t k = model.config().num_classes;
    Prediction out;
    out.classes.reserve(set.size());
    out.confidence.reserve(set.size());
    for (std::size_t start = 0; start < set.size(); start += batch_size) {
        const std::size_t end = std::min(set.size(), start + batch_size);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Tensor<float> proba = predict_proba(model, make_batch(set, idx));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const float* row = proba.ptr() + i * k;
            const std::size_t c = argmax_row(row, k);
            out.classes.push_back(c);
            out.confidence.push_back(row[c]);
        }
    }
    return out;
}

std::vector<std::size_t> predict(Classifier<float>& model, const PatchSet& set, std::size_t batch_size) {
    return predict_with_confidence(model, set, batch_size).classes;
}

ConfusionMatrix confusion(Classifier<float>& model, const PatchSet& test_set, std::size_t batch_size) {
    std::vector<std::size_t> all(test_set.size());
    std::iota(all.begin(), all.end(), 0);
    const std::vector<std::size_t> truth = batch_labels(test_set, all);
    return ConfusionMatrix::from_pairs(model.config().num_classes, truth, predict(model, test_set, batch_size));
}

EvalReport evaluate(Classifier<float>& model, const PatchSet& test_set, const EvalOptions& options) {
    if (test_set.empty()) throw std::invalid_argument("evaluate: empty test set");
    std::vector<std::size_t> all(test_set.size());
    std::iota(all.begin(), all.end(), 0);
    const std::vector<std::size_t> truth = batch_labels(test_set, all);
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<std::size_t> pred = predict(model, test_set, options.batch_size);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const ConfusionMatrix cm = ConfusionMatrix::from_pairs(model.config().num_classes, truth, pred);
    const double params_m = static_cast<double>(model.parameter_count()) / 1e6;
    return make_report(cm, options.infer_time_s.value_or(elapsed), params_m, options.weights);
}

void to_json(nlohmann::json& j, const BenchReport& r) {
    j = nlohmann::json{{"label", r.label},       {"warmup", r.warmup},         {"runs", r.runs},
                       {"times_s", r.times_s},   {"median_s", r.median_s},     {"mean_s", r.mean_s},
                       {"batch_size", r.batch_size}, {"device", r.device}, {"params_millions", r.params_millions}};
}

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median: no values");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string device_note() {
    return "cpu, " + std::to_string(std::max(1u, std::thread::hardware_concurrency())) +
           " hardware threads, single-threaded measurement";
}

BenchReport benchmark(const std::function<void()>& fn, std::size_t warmup, std::size_t runs) {
    if (warmup < kMinWarmup) {
        throw std::invalid_argument("benchmark: warmup must be >= " + std::to_string(kMinWarmup));
    }
    if (runs < 1) throw std::invalid_argument("benchmark: runs must be >= 1");
    for (std::size_t i = 0; i < warmup; ++i) fn();
    BenchReport r;
    r.warmup = warmup;
    r.runs = runs;
    for (std::size_t i = 0; i < runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        r.times_s.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    r.median_s = median(r.times_s);
    r.mean_s = std::accumulate(r.times_s.begin(), r.times_s.end(), 0.0) / static_cast<double>(runs);
    r.device = device_note();
    return r;
}

}  // namespace spectralca
