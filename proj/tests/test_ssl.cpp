#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

#include "spectralca/ssl.hpp"

using namespace spectralca;

namespace {

ModelConfig toy_config() {
    ModelConfig c;
    c.num_classes = 2;
    c.patch = 3;
    c.bands = 6;
    c.stem_channels = 4;
    c.block1_dim = 8;
    c.heads = 2;
    return c;
}

PatchSet ramps(std::size_t n, std::uint64_t seed, bool labeled, std::size_t row0 = 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> noise(0.0f, 0.3f);
    PatchSet ps;
    ps.patch = 3;
    ps.bands = 6;
    for (std::size_t i = 0; i < n; ++i) {
        PatchEntry e;
        e.coord = {row0 + i, 2};
        const bool rising = i % 2 == 0;
        e.label = labeled ? static_cast<std::uint16_t>(rising ? 1 : 2) : kUnlabeled;
        for (std::size_t px = 0; px < 9; ++px)
            for (std::size_t b = 0; b < 6; ++b) {
                const float ramp = (static_cast<float>(b) - 2.5f) / 2.5f;
                e.values.push_back((rising ? ramp : -ramp) + noise(rng));
            }
        ps.entries.push_back(std::move(e));
    }
    return ps;
}

Classifier<float> trained_model(const PatchSet& labeled) {
    Classifier<float> model(toy_config(), 1);
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 8;
    cfg.seed = 2;
    train(model, labeled, cfg);
    return model;
}

}  // namespace

TEST_SUITE("ssl") {

TEST_CASE("selection is strict and most-confident first") {
    CHECK(select_by_confidence({0.95f, 0.85f, 0.91f}, 0.9) == std::vector<std::size_t>{0, 2});
    CHECK(select_by_confidence({0.91f, 0.95f, 0.85f}, 0.9) == std::vector<std::size_t>{1, 0});
    CHECK(select_by_confidence({0.5f, 0.75f}, 0.75).empty());
    CHECK(select_by_confidence({0.99f, 0.97f, 0.98f}, 0.9, 2) == std::vector<std::size_t>{0, 2});
    CHECK(select_by_confidence({}, 0.9).empty());
}

TEST_CASE("config validation") {
    SslConfig c;
    CHECK(c.tau == 0.9);
    CHECK(c.cap == 5000);
    c.tau = 0.0;
    CHECK_THROWS(c.validate());
    c.tau = 1.5;
    CHECK_THROWS(c.validate());
    c.tau = 1.0;
    CHECK_NOTHROW(c.validate());
    nlohmann::json j = c;
    CHECK(j.get<SslConfig>().tau == 1.0);
    CHECK_FALSE(j.get<SslConfig>().learning_rate.has_value());
    c.learning_rate = 2e-4;
    j = c;
    CHECK(j.get<SslConfig>().learning_rate == 2e-4);
    c.learning_rate = -1.0;
    CHECK_THROWS(c.validate());
}

TEST_CASE("a zero round rate adds pseudo-labels without moving the weights") {
    auto labeled = ramps(32, 14, true);
    auto model = trained_model(labeled);
    std::vector<Tensor<float>> before;
    for (auto* p : model.parameters()) before.push_back(p->value);
    auto pool = ramps(40, 15, false, 100);
    SslConfig ssl;
    ssl.tau = 0.5;
    ssl.epochs_per_round = 1;
    ssl.learning_rate = 0.0;
    TrainConfig tc;
    tc.batch_size = 8;
    const auto stats = self_training_round(model, labeled, pool, ssl, tc, 1);
    REQUIRE(stats.selected > 0);
    CHECK(stats.retrained);
    const auto after = model.parameters();
    for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i]->value == before[i]);
}

TEST_CASE("tau = 1 and a uniform model select nothing") {
    const auto labeled = ramps(32, 3, true);
    auto model = trained_model(labeled);
    const auto pool = ramps(40, 4, false, 100);
    CHECK(pseudo_label_select(model, pool, 1.0).entries.empty());
    CHECK(pseudo_label_select(model, PatchSet{}, 0.9).entries.empty());

    Classifier<float> uniform(toy_config(), 5);
    uniform.head.weight.value.fill(0.0f);
    uniform.head.bias.value.fill(0.0f);
    CHECK(pseudo_label_select(uniform, pool, 0.9).entries.empty());
    CHECK(pseudo_label_select(uniform, pool, 0.49).entries.size() == pool.size());
}

TEST_CASE("empty selection leaves the model bit-exact") {
    auto labeled = ramps(16, 6, true);
    Classifier<float> model(toy_config(), 7);
    model.head.weight.value.fill(0.0f);
    model.head.bias.value.fill(0.0f);
    std::vector<Tensor<float>> before;
    for (auto* p : model.state()) before.push_back(p->value);
    auto pool = ramps(20, 8, false, 100);
    SslConfig ssl;
    TrainConfig tc;
    const auto stats = self_training_round(model, labeled, pool, ssl, tc, 1);
    CHECK(stats.selected == 0);
    CHECK_FALSE(stats.retrained);
    CHECK(pool.size() == 20);
    CHECK(labeled.size() == 16);
    std::size_t i = 0;
    for (auto* p : model.state()) CHECK(p->value == before[i++]);
}

TEST_CASE("rounds conserve the pool and never relabel originals") {
    auto labeled = ramps(24, 9, true);
    auto model = trained_model(labeled);
    const auto originals = labeled.entries;
    auto pool = ramps(60, 10, false, 100);
    const auto pool0 = pool.coords();
    const auto test = ramps(20, 11, true, 500);
    SslConfig ssl;
    ssl.tau = 0.8;
    ssl.rounds = 3;
    ssl.cap = 15;
    ssl.epochs_per_round = 2;
    TrainConfig tc;
    tc.batch_size = 8;
    std::ostringstream log;
    const auto stats = run_self_training(model, labeled, pool, ssl, tc, &test, &log);
    REQUIRE(stats.size() == 3);
    std::size_t added = 0;
    for (const auto& s : stats) {
        CHECK(s.selected <= 15);
        added += s.selected;
        CHECK(s.test.has_value());
        if (s.selected > 0) CHECK(s.mean_confidence > 0.8);
    }
    CHECK(added > 0);
    CHECK(pool.size() + added == 60);
    CHECK(labeled.size() == 24 + added);
    CHECK(stats.back().pseudo_total == added);
    for (std::size_t i = 0; i < originals.size(); ++i) {
        CHECK(labeled.entries[i].coord == originals[i].coord);
        CHECK(labeled.entries[i].label == originals[i].label);
        CHECK_FALSE(labeled.entries[i].pseudo);
    }
    // every pool pixel ends up in exactly one place
    std::multiset<PixelCoord> seen;
    for (const auto& e : pool.entries) seen.insert(e.coord);
    for (std::size_t i = 24; i < labeled.size(); ++i) {
        CHECK(labeled.entries[i].pseudo);
        CHECK(labeled.entries[i].label >= 1);
        seen.insert(labeled.entries[i].coord);
    }
    CHECK(std::vector<PixelCoord>(seen.begin(), seen.end()) == pool0);
    std::istringstream lines(log.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) CHECK(nlohmann::json::parse(line)["round"] == ++n);
    CHECK(n == 3);
}

TEST_CASE("raising tau never selects more") {
    const auto labeled = ramps(32, 12, true);
    auto model = trained_model(labeled);
    const auto pool = ramps(80, 13, false, 100);
    std::size_t prev = pool.size() + 1;
    for (double tau : {0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999, 1.0}) {
        const auto picked = pseudo_label_select(model, pool, tau);
        CHECK(picked.entries.size() <= prev);
        for (const auto& p : picked.entries) CHECK(p.confidence > tau);
        prev = picked.entries.size();
    }
}

}  // TEST_SUITE
