#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace spectralca {

/// Rows are true classes, columns predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes);
    ConfusionMatrix(std::size_t num_classes, std::vector<std::uint64_t> counts);

    static ConfusionMatrix from_pairs(std::size_t num_classes, const std::vector<std::size_t>& truth,
                                      const std::vector<std::size_t>& predicted);

    void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1);

    std::size_t num_classes() const { return k_; }
    std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
    std::uint64_t total() const;
    std::uint64_t row_total(std::size_t c) const;
    std::uint64_t col_total(std::size_t c) const;
    std::uint64_t trace() const;
    const std::vector<std::uint64_t>& counts() const { return counts_; }

private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

double overall_accuracy(const ConfusionMatrix& cm);
/// Recall per class; empty classes are nullopt.
std::vector<std::optional<double>> per_class_accuracy(const ConfusionMatrix& cm);
/// Mean recall over the classes that occur in the ground truth.
double average_accuracy(const ConfusionMatrix& cm);
double kappa(const ConfusionMatrix& cm);

struct ObjectiveWeights {
    double lambda_error = 1.0 / 3.0;
    double lambda_time = 1.0 / 3.0;
    double lambda_params = 1.0 / 3.0;
    double t_ref = 1.0;  // seconds
    double p_ref = 1.0;  // millions

    ObjectiveWeights() = default;
    ObjectiveWeights(double l1, double l2, double l3, double t_ref_, double p_ref_);
    void validate() const;
};

/// J = l1 * E + l2 * T / T_ref + l3 * P / P_ref.
double objective_j(double error, double seconds, double params_millions, const ObjectiveWeights& w);

struct EvalReport {
    double oa = 0;
    double aa = 0;
    double kappa = 0;
    std::vector<std::optional<double>> per_class;
    double infer_time_s = 0;
    double params_millions = 0;
    std::optional<double> objective_j;
    std::uint64_t samples = 0;
    std::size_t empty_classes = 0;
};

EvalReport make_report(const ConfusionMatrix& cm, double infer_time_s, double params_millions,
                       const std::optional<ObjectiveWeights>& weights = std::nullopt);

void to_json(nlohmann::json& j, const EvalReport& r);

}  // namespace spectralca
