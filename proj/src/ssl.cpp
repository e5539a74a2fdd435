#include "spectralca/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spectralca {

void SslConfig::validate() const {
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("SslConfig: tau must be in (0, 1]");
    if (epochs_per_round == 0) throw std::invalid_argument("SslConfig: epochs_per_round must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("SslConfig: batch_size must be >= 1");
    if (learning_rate && !(*learning_rate >= 0.0 && std::isfinite(*learning_rate))) {
        throw std::invalid_argument("SslConfig: learning_rate must be finite and >= 0");
    }
}

void to_json(nlohmann::json& j, const SslConfig& c) {
    j = nlohmann::json{{"tau", c.tau},
                       {"rounds", c.rounds},
                       {"cap", c.cap},
                       {"epochs_per_round", c.epochs_per_round},
                       {"batch_size", c.batch_size}};
    j["learning_rate"] = c.learning_rate ? nlohmann::json(*c.learning_rate) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, SslConfig& c) {
    SslConfig d;
    c.tau = j.value("tau", d.tau);
    c.rounds = j.value("rounds", d.rounds);
    c.cap = j.value("cap", d.cap);
    c.epochs_per_round = j.value("epochs_per_round", d.epochs_per_round);
    c.batch_size = j.value("batch_size", d.batch_size);
    if (j.contains("learning_rate") && !j.at("learning_rate").is_null()) {
        c.learning_rate = j.at("learning_rate").get<double>();
    }
}

std::vector<std::size_t> select_by_confidence(const std::vector<float>& confidence, double tau, std::size_t cap) {
    std::vector<std::size_t> picked;
    for (std::size_t i = 0; i < confidence.size(); ++i) {
        if (static_cast<double>(confidence[i]) > tau) picked.push_back(i);
    }
    std::stable_sort(picked.begin(), picked.end(),
                     [&](std::size_t a, std::size_t b) { return confidence[a] > confidence[b]; });
    if (picked.size() > cap) picked.resize(cap);
    return picked;
}

PseudoLabelSet pseudo_label_select(Classifier<float>& model, const PatchSet& pool, double tau, std::size_t cap,
                                   std::size_t round, std::size_t batch_size) {
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("pseudo_label_select: tau must be in (0, 1]");
    PseudoLabelSet set;
    set.tau = tau;
    set.round = round;
    if (pool.empty()) return set;
    const Prediction pred = predict_with_confidence(model, pool, batch_size);
    for (std::size_t i : select_by_confidence(pred.confidence, tau, cap)) {
        set.entries.push_back({i, pool.entries[i].coord, static_cast<std::uint16_t>(pred.classes[i] + 1),
                               static_cast<double>(pred.confidence[i])});
    }
    return set;
}

void to_json(nlohmann::json& j, const RoundStats& s) {
    j = nlohmann::json{{"round", s.round},
                       {"selected", s.selected},
                       {"mean_confidence", s.mean_confidence},
                       {"pool_remaining", s.pool_remaining},
                       {"train_size", s.train_size},
                       {"pseudo_total", s.pseudo_total},
                       {"retrained", s.retrained}};
    if (s.test) {
        j["test"] = {{"oa", s.test->oa}, {"aa", s.test->aa}, {"kappa", s.test->kappa}};
    } else {
        j["test"] = nullptr;
    }
}

RoundStats self_training_round(Classifier<float>& model, PatchSet& labeled, PatchSet& pool, const SslConfig& ssl,
                               const TrainConfig& train_config, std::size_t round, const PatchSet* test_set,
                               PseudoLabelSet* selection) {
    ssl.validate();
    PseudoLabelSet picked = pseudo_label_select(model, pool, ssl.tau, ssl.cap, round, ssl.batch_size);

    RoundStats stats;
    stats.round = round;
    stats.selected = picked.entries.size();
    if (!picked.entries.empty()) {
        double sum = 0;
        for (const PseudoLabel& p : picked.entries) sum += p.confidence;
        stats.mean_confidence = sum / static_cast<double>(picked.entries.size());
    }

    std::vector<bool> taken(pool.size(), false);
    for (const PseudoLabel& p : picked.entries) {
        PatchEntry e = pool.entries[p.index];
        e.label = p.label;
        e.pseudo = true;
        labeled.entries.push_back(std::move(e));
        taken[p.index] = true;
    }
    std::vector<PatchEntry> remaining;
    remaining.reserve(pool.size() - picked.entries.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (!taken[i]) remaining.push_back(std::move(pool.entries[i]));
    }
    pool.entries = std::move(remaining);

    if (!picked.entries.empty()) {
        TrainConfig tc = train_config;
        tc.epochs = ssl.epochs_per_round;
        tc.seed = train_config.seed + round;
        tc.eval_every = 0;
        if (ssl.learning_rate) tc.learning_rate = *ssl.learning_rate;
        train(model, labeled, tc);
        stats.retrained = true;
    }
    stats.pool_remaining = pool.size();
    stats.train_size = labeled.size();
    stats.pseudo_total = static_cast<std::size_t>(
        std::count_if(labeled.entries.begin(), labeled.entries.end(), [](const PatchEntry& e) { return e.pseudo; }));
    if (test_set) {
        EvalOptions opts;
        opts.batch_size = ssl.batch_size;
        stats.test = evaluate(model, *test_set, opts);
    }
    if (selection) *selection = std::move(picked);
    return stats;
}

std::vector<RoundStats> run_self_training(Classifier<float>& model, PatchSet& labeled, PatchSet& pool,
                                          const SslConfig& ssl, const TrainConfig& train_config,
                                          const PatchSet* test_set, std::ostream* log) {
    ssl.validate();
    std::vector<RoundStats> out;
    for (std::size_t r = 1; r <= ssl.rounds; ++r) {
        out.push_back(self_training_round(model, labeled, pool, ssl, train_config, r, test_set));
        if (log) {
            *log << nlohmann::json(out.back()).dump() << '\n';
            log->flush();
        }
    }
    return out;
}

}  // namespace spectralca
