#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spectralca/classifier.hpp"
#include "spectralca/data.hpp"
#include "spectralca/metrics.hpp"

namespace spectralca {

struct TrainConfig {
    std::size_t epochs = 60;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    std::size_t eval_every = 0;  // epochs between test evaluations; 0 = never
    std::optional<double> target_oa;  // stop after an evaluated epoch reaches this test OA

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Adaptive-moment optimizer with bias correction.
class Adam {
public:
    Adam(std::vector<Parameter<float>*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);

    void zero_grad();
    void step();
    std::size_t steps() const { return t_; }

private:
    std::vector<Parameter<float>*> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double loss = 0;        // mean over samples
    double acc = 0;         // training accuracy during the epoch
    std::optional<double> test_oa;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    double first_batch_loss = 0;
};

/// Mini-batch training on cross-entropy. Sample order is reshuffled each
/// epoch from `config.seed`; dropout draws from a separate stream. Every
/// record is also written as one JSON line to `log` when given.
TrainHistory train(Classifier<float>& model, const PatchSet& train_set, const TrainConfig& config,
                   const PatchSet* test_set = nullptr, std::ostream* log = nullptr);

/// Eval-mode argmax predictions (0-based classes) for every entry.
std::vector<std::size_t> predict(Classifier<float>& model, const PatchSet& set, std::size_t batch_size = 128);

/// Eval-mode max softmax probability and argmax per entry.
struct Prediction {
    std::vector<std::size_t> classes;
    std::vector<float> confidence;
};
Prediction predict_with_confidence(Classifier<float>& model, const PatchSet& set, std::size_t batch_size = 128);

ConfusionMatrix confusion(Classifier<float>& model, const PatchSet& test_set, std::size_t batch_size = 128);

struct EvalOptions {
    std::size_t batch_size = 128;
    /// Inference seconds from a prior benchmark; measured over the test set otherwise.
    std::optional<double> infer_time_s;
    std::optional<ObjectiveWeights> weights;
};

EvalReport evaluate(Classifier<float>& model, const PatchSet& test_set, const EvalOptions& options = {});

struct BenchReport {
    std::string label;
    std::size_t warmup = 0;
    std::size_t runs = 0;
    std::vector<double> times_s;
    double median_s = 0;
    double mean_s = 0;
    std::size_t batch_size = 0;
    std::string device;
    double params_millions = 0;
};

void to_json(nlohmann::json& j, const BenchReport& r);

inline constexpr std::size_t kMinWarmup = 3;

/// Times `fn` with a monotonic clock: `warmup` discarded calls, then `runs` measured ones.
BenchReport benchmark(const std::function<void()>& fn, std::size_t warmup, std::size_t runs);

double median(std::vector<double> values);
std::string device_note();

}  // namespace spectralca
