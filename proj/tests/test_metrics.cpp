#include <doctest.h>

#include <random>

#include "spectralca/metrics.hpp"

using namespace spectralca;

namespace {

struct Brute {
    double oa, aa, kappa;
};

// Counts straight from the pair lists; no ConfusionMatrix involved.
Brute brute_force(std::size_t k, const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred) {
    std::uint64_t correct = 0;
    std::vector<std::uint64_t> rows(k, 0), cols(k, 0), hits(k, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ++rows[truth[i]];
        ++cols[pred[i]];
        if (truth[i] == pred[i]) {
            ++correct;
            ++hits[truth[i]];
        }
    }
    const auto m = static_cast<double>(truth.size());
    Brute b{};
    b.oa = static_cast<double>(correct) / m;
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < k; ++c) {
        if (rows[c] == 0) continue;
        sum += static_cast<double>(hits[c]) / static_cast<double>(rows[c]);
        ++n;
    }
    b.aa = sum / static_cast<double>(n);
    // (m * correct - sum r_c c_c) / (m^2 - sum r_c c_c), exact in integers
    std::int64_t chance = 0;
    for (std::size_t c = 0; c < k; ++c) chance += static_cast<std::int64_t>(rows[c] * cols[c]);
    const auto total = static_cast<std::int64_t>(truth.size());
    b.kappa = static_cast<double>(total * static_cast<std::int64_t>(correct) - chance) /
              static_cast<double>(total * total - chance);
    return b;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("hand examples") {
    const ConfusionMatrix cm(2, {2, 0, 1, 1});
    CHECK(overall_accuracy(cm) == 0.75);
    CHECK(average_accuracy(cm) == 0.75);
    CHECK(overall_accuracy(ConfusionMatrix(3, {4, 0, 0, 0, 2, 0, 0, 0, 7})) == 1.0);
    CHECK(average_accuracy(ConfusionMatrix(3, {4, 0, 0, 0, 2, 0, 0, 0, 7})) == 1.0);
    CHECK(overall_accuracy(ConfusionMatrix(2, {0, 3, 5, 0})) == 0.0);
    CHECK(kappa(ConfusionMatrix(2, {1, 1, 1, 1})) == 0.0);
    CHECK(kappa(ConfusionMatrix(3, {4, 0, 0, 0, 2, 0, 0, 0, 7})) == 1.0);
}

TEST_CASE("empty classes are excluded from AA") {
    const ConfusionMatrix cm(3, {5, 0, 0, 0, 0, 0, 1, 0, 3});
    CHECK(average_accuracy(cm) == doctest::Approx((1.0 + 0.75) / 2));
    const auto pc = per_class_accuracy(cm);
    CHECK(pc[0] == 1.0);
    CHECK_FALSE(pc[1].has_value());
    const auto r = make_report(cm, 0.0, 0.0);
    CHECK(r.empty_classes == 1);
    nlohmann::json j = r;
    CHECK(j["per_class"][1].is_null());
    CHECK(j["aa_excluded_empty_classes"] == 1);
}

TEST_CASE("degenerate marginals") {
    CHECK(kappa(ConfusionMatrix(2, {6, 0, 0, 0})) == 1.0);
    CHECK_THROWS_AS(kappa(ConfusionMatrix(2, {0, 0, 0, 0})), std::invalid_argument);
    CHECK_THROWS_AS(overall_accuracy(ConfusionMatrix(3)), std::invalid_argument);
    ConfusionMatrix cm(2);
    CHECK_THROWS_AS(cm.add(2, 0), std::out_of_range);
}

TEST_CASE("trio matches a brute-force count over 10^4 pairs") {
    std::mt19937_64 rng(1);
    for (std::size_t k : {2u, 5u, 9u}) {
        std::uniform_int_distribution<std::size_t> cls(0, k - 1);
        std::bernoulli_distribution right(0.6);
        std::vector<std::size_t> truth(10000), pred(10000);
        for (std::size_t i = 0; i < truth.size(); ++i) {
            truth[i] = cls(rng);
            pred[i] = right(rng) ? truth[i] : cls(rng);
        }
        const auto cm = ConfusionMatrix::from_pairs(k, truth, pred);
        const auto b = brute_force(k, truth, pred);
        CHECK(cm.total() == 10000);
        CHECK(overall_accuracy(cm) == b.oa);
        CHECK(average_accuracy(cm) == b.aa);
        CHECK(kappa(cm) == b.kappa);
    }
}

TEST_CASE("kappa agrees with the agreement-table form on random 5-class matrices") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<std::uint64_t> count(0, 40);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::uint64_t> c(25);
        for (auto& v : c) v = count(rng);
        const ConfusionMatrix cm(5, c);
        // proportions table, then chance agreement from the marginal proportions
        double m = 0;
        for (auto v : c) m += static_cast<double>(v);
        double po = 0, pe = 0;
        for (std::size_t i = 0; i < 5; ++i) {
            double r = 0, col = 0;
            for (std::size_t j = 0; j < 5; ++j) {
                r += c[i * 5 + j] / m;
                col += c[j * 5 + i] / m;
            }
            po += c[i * 5 + i] / m;
            pe += r * col;
        }
        CHECK(kappa(cm) == doctest::Approx((po - pe) / (1 - pe)).epsilon(1e-10));
    }
}

TEST_CASE("kappa < p_o exactly when p_e > 0 and p_o < 1") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::uint64_t> count(0, 6);
    std::bernoulli_distribution zero(0.3);
    int strict = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<std::uint64_t> c(9);
        for (auto& v : c) v = zero(rng) ? 0 : count(rng);
        const ConfusionMatrix cm(3, c);
        if (cm.total() == 0) continue;
        double pe = 0;
        for (std::size_t i = 0; i < 3; ++i) pe += double(cm.row_total(i)) * double(cm.col_total(i));
        if (pe == double(cm.total()) * double(cm.total())) continue;
        const double po = overall_accuracy(cm);
        const bool expect = pe > 0 && po < 1;
        CHECK((kappa(cm) < po) == expect);
        strict += expect;
    }
    CHECK(strict > 1000);
}

TEST_CASE("OA equals AA for equal rows and uniform recall") {
    for (std::uint64_t hit = 0; hit <= 10; ++hit) {
        const std::uint64_t miss = 10 - hit;
        const ConfusionMatrix cm(3, {hit, miss, 0, 0, hit, miss, miss, 0, hit});
        CHECK(overall_accuracy(cm) == doctest::Approx(average_accuracy(cm)).epsilon(1e-15));
    }
}

TEST_CASE("objective J") {
    const ObjectiveWeights equal(1.0 / 3, 1.0 / 3, 1.0 / 3, 2.5, 0.4);
    CHECK(objective_j(1.0 - 0.9334, 2.5, 0.4, equal) == doctest::Approx(0.6889).epsilon(1e-4));
    const ObjectiveWeights error_only(1, 0, 0, 1, 1);
    CHECK(objective_j(0.123, 7, 9, error_only) == 0.123);
    const ObjectiveWeights w(0.5, 0.2, 0.3, 3, 5);
    CHECK(objective_j(0.1, 3, 5, w) == doctest::Approx(0.5 * 0.1 + 0.2 + 0.3));
    CHECK_THROWS_AS(ObjectiveWeights(0.5, 0.5, 0.5, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(ObjectiveWeights(1, 0, 0, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(ObjectiveWeights(1.2, -0.2, 0, 1, 1), std::invalid_argument);
}

TEST_CASE("J is monotone in E, T and P") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 500; ++trial) {
        double a = u(rng), b = u(rng);
        const double s = a + b + u(rng);
        const ObjectiveWeights w(a / s, b / s, 1 - a / s - b / s, 0.5 + u(rng), 0.5 + u(rng));
        const double e = u(rng), t = u(rng), p = u(rng), d = u(rng);
        const double j = objective_j(e, t, p, w);
        CHECK(objective_j(e + d, t, p, w) >= j);
        CHECK(objective_j(e, t + d, p, w) >= j);
        CHECK(objective_j(e, t, p + d, w) >= j);
    }
}

TEST_CASE("report keys") {
    const ConfusionMatrix cm(2, {3, 1, 0, 4});
    const auto r = make_report(cm, 0.5, 0.38, ObjectiveWeights{});
    nlohmann::json j = r;
    for (const char* key : {"oa", "aa", "kappa", "per_class", "infer_time_s", "params_millions", "objective_j"})
        CHECK_MESSAGE(j.contains(key), key);
    const auto again = nlohmann::json::parse(j.dump());
    CHECK(again == j);
    CHECK(j["oa"] == 0.875);
}

}  // TEST_SUITE
