#pragma once

#include <limits>
#include <optional>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "spectralca/trainer.hpp"

namespace spectralca {

struct PseudoLabel {
    std::size_t index = 0;  // position in the pool at selection time
    PixelCoord coord;
    std::uint16_t label = kUnlabeled;  // 1-based predicted class
    double confidence = 0;
};

struct PseudoLabelSet {
    double tau = 0.9;
    std::size_t round = 0;
    std::vector<PseudoLabel> entries;
};

struct SslConfig {
    double tau = 0.9;
    std::size_t rounds = 3;
    std::size_t cap = 5000;  // per round
    std::size_t epochs_per_round = 10;
    std::size_t batch_size = 128;  // inference batch over the pool
    std::optional<double> learning_rate;  // retraining rate; the train config's when unset

    void validate() const;
};

void to_json(nlohmann::json& j, const SslConfig& c);
void from_json(const nlohmann::json& j, SslConfig& c);

/// Indices with confidence strictly above tau, most confident first (ties by
/// index), truncated to `cap`.
std::vector<std::size_t> select_by_confidence(const std::vector<float>& confidence, double tau,
                                              std::size_t cap = std::numeric_limits<std::size_t>::max());

PseudoLabelSet pseudo_label_select(Classifier<float>& model, const PatchSet& pool, double tau,
                                   std::size_t cap = std::numeric_limits<std::size_t>::max(), std::size_t round = 0,
                                   std::size_t batch_size = 128);

struct RoundStats {
    std::size_t round = 0;  // 1-based
    std::size_t selected = 0;
    double mean_confidence = 0;
    std::size_t pool_remaining = 0;
    std::size_t train_size = 0;
    std::size_t pseudo_total = 0;
    bool retrained = false;
    std::optional<EvalReport> test;
};

void to_json(nlohmann::json& j, const RoundStats& s);

/// One self-training round: select from `pool`, move the selection into
/// `labeled` as pseudo-labeled entries, retrain (warm start) on the expanded
/// set. An empty selection leaves the model untouched.
RoundStats self_training_round(Classifier<float>& model, PatchSet& labeled, PatchSet& pool, const SslConfig& ssl,
                               const TrainConfig& train_config, std::size_t round, const PatchSet* test_set = nullptr,
                               PseudoLabelSet* selection = nullptr);

/// Rounds 1..ssl.rounds; round r retrains with seed train_config.seed + r.
/// Each round's stats go to `log` as one JSON line.
std::vector<RoundStats> run_self_training(Classifier<float>& model, PatchSet& labeled, PatchSet& pool,
                                          const SslConfig& ssl, const TrainConfig& train_config,
                                          const PatchSet* test_set = nullptr, std::ostream* log = nullptr);

}  // namespace spectralca
