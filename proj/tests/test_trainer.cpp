#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>
#include <thread>

#include "spectralca/trainer.hpp"

using namespace spectralca;

namespace {

ModelConfig toy_config(std::size_t classes) {
    ModelConfig c;
    c.num_classes = classes;
    c.patch = 3;
    c.bands = 6;
    c.stem_channels = 4;
    c.block1_dim = 8;
    c.heads = 2;
    return c;
}

// Class k: spectrum rising (k=1) or falling (k=2) over the bands, plus noise.
PatchSet separable(std::size_t per_class, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> noise(0.0f, 0.1f);
    PatchSet ps;
    ps.patch = 3;
    ps.bands = 6;
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        PatchEntry e;
        e.coord = {i, 0};
        e.label = static_cast<std::uint16_t>(i % 2 + 1);
        for (std::size_t px = 0; px < 9; ++px)
            for (std::size_t b = 0; b < 6; ++b) {
                const float ramp = (static_cast<float>(b) - 2.5f) / 2.5f;
                e.values.push_back((e.label == 1 ? ramp : -ramp) + noise(rng));
            }
        ps.entries.push_back(std::move(e));
    }
    return ps;
}

PatchSet balanced_random(std::size_t classes, std::size_t per_class, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    PatchSet ps;
    ps.patch = 3;
    ps.bands = 6;
    for (std::size_t i = 0; i < classes * per_class; ++i) {
        PatchEntry e;
        e.coord = {i, 1};
        e.label = static_cast<std::uint16_t>(i % classes + 1);
        for (std::size_t j = 0; j < 54; ++j) e.values.push_back(n(rng));
        ps.entries.push_back(std::move(e));
    }
    return ps;
}

std::vector<Tensor<float>> snapshot(Classifier<float>& m) {
    std::vector<Tensor<float>> out;
    for (auto* p : m.parameters()) out.push_back(p->value);
    return out;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("config validation and JSON") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.batch_size = 0;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.learning_rate = -1;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.epochs = 7;
    c.seed = 99;
    nlohmann::json j = c;
    const auto back = j.get<TrainConfig>();
    CHECK(back.epochs == 7);
    CHECK(back.seed == 99);
    CHECK(back.batch_size == 32);
}

TEST_CASE("lr = 0 leaves every parameter unchanged") {
    Classifier<float> model(toy_config(2), 1);
    const auto before = snapshot(model);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.0;
    train(model, separable(20, 2), cfg);
    CHECK(snapshot(model) == before);
}

TEST_CASE("separable toy spectra reach training accuracy 1.0") {
    Classifier<float> model(toy_config(2), 3);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 16;
    cfg.seed = 4;
    std::ostringstream log;
    const auto train_set = separable(32, 5);
    const auto hist = train(model, train_set, cfg, nullptr, &log);
    REQUIRE(hist.epochs.size() == 50);
    bool reached = false;
    for (const auto& r : hist.epochs) reached = reached || r.acc == 1.0;
    CHECK(reached);
    CHECK(hist.epochs.back().loss < hist.epochs.front().loss);
    // one JSON record per epoch
    std::istringstream lines(log.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j["epoch"] == ++n);
        CHECK(j.contains("loss"));
        CHECK(j.contains("acc"));
        CHECK(j.contains("test_oa"));
    }
    CHECK(n == 50);
}

TEST_CASE("first-batch loss is near ln K") {
    for (std::size_t k : {2u, 4u, 6u}) {
        Classifier<float> model(toy_config(k), 10 + k);
        TrainConfig cfg;
        cfg.epochs = 1;
        cfg.batch_size = 32;
        const auto hist = train(model, balanced_random(k, 16, k), cfg);
        CAPTURE(k);
        CHECK(std::abs(hist.first_batch_loss - std::log(double(k))) <= 0.2 * std::log(double(k)));
    }
}

TEST_CASE("identical seeds give identical histories") {
    auto run = [](std::uint64_t seed) {
        ModelConfig c = toy_config(2);
        c.dropout = 0.2;
        Classifier<float> model(c, 7);
        TrainConfig cfg;
        cfg.epochs = 4;
        cfg.batch_size = 10;
        cfg.seed = seed;
        cfg.eval_every = 2;
        const auto test = separable(5, 9);
        auto hist = train(model, separable(15, 8), cfg, &test);
        return std::make_pair(hist, snapshot(model));
    };
    const auto [h1, p1] = run(1);
    const auto [h2, p2] = run(1);
    const auto [h3, p3] = run(2);
    REQUIRE(h1.epochs.size() == h2.epochs.size());
    for (std::size_t i = 0; i < h1.epochs.size(); ++i) {
        CHECK(h1.epochs[i].loss == h2.epochs[i].loss);
        CHECK(h1.epochs[i].test_oa == h2.epochs[i].test_oa);
    }
    CHECK(h1.epochs[1].test_oa.has_value());
    CHECK_FALSE(h1.epochs[0].test_oa.has_value());
    CHECK(p1 == p2);
    CHECK(p1 != p3);
}

TEST_CASE("optimizer contracts on half squared norm") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<float> mag(1.0f, 2.0f);
    std::bernoulli_distribution sign(0.5);
    Parameter<float> theta("theta", Tensor<float>({40}));
    for (auto& v : theta.value.data()) v = sign(rng) ? mag(rng) : -mag(rng);
    Adam opt({&theta}, 0.01);
    double prev = INFINITY;
    for (int step = 0; step < 80; ++step) {
        opt.zero_grad();
        theta.grad = theta.value;  // gradient of 0.5 |theta|^2
        opt.step();
        double norm = 0;
        for (float v : theta.value.data()) norm += double(v) * v;
        norm = std::sqrt(norm);
        if (step >= 10) CHECK(norm < prev);
        prev = norm;
    }
    CHECK(opt.steps() == 80);
}

TEST_CASE("evaluate: constant predictor on a balanced set") {
    Classifier<float> model(toy_config(4), 12);
    model.head.weight.value.fill(0.0f);
    model.head.bias.value.fill(0.0f);
    model.head.bias.value[0] = 1.0f;
    const auto report = evaluate(model, balanced_random(4, 5, 13));
    CHECK(report.oa == 0.25);
    CHECK(report.aa == 0.25);
    CHECK(report.kappa == 0.0);
    CHECK(report.samples == 20);
    CHECK(report.params_millions == doctest::Approx(model.parameter_count() / 1e6));
    CHECK(report.infer_time_s > 0.0);
    nlohmann::json j = report;
    CHECK(nlohmann::json::parse(j.dump()) == j);

    std::vector<std::size_t> truth{0, 1, 2, 3, 3, 2};
    const auto perfect = make_report(ConfusionMatrix::from_pairs(4, truth, truth), 0, 0);
    CHECK(perfect.oa == 1.0);
    CHECK(perfect.aa == 1.0);
    CHECK(perfect.kappa == 1.0);
}

TEST_CASE("benchmark") {
    std::size_t calls = 0;
    const auto r = benchmark([&] { ++calls; }, 3, 5);
    CHECK(r.times_s.size() == 5);
    CHECK(r.runs == 5);
    CHECK(r.warmup == 3);
    CHECK(calls == 8);
    CHECK_THROWS(benchmark([] {}, 2, 5));
    CHECK_THROWS(benchmark([] {}, 3, 0));

    std::size_t n = 0;
    const auto slow = benchmark(
        [&] {
            if (++n == 5) std::this_thread::sleep_for(std::chrono::milliseconds(200));
        },
        3, 7);
    CHECK(slow.median_s < 0.01);
    CHECK(slow.mean_s > slow.median_s);
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
    CHECK_FALSE(device_note().empty());
}

}  // TEST_SUITE
