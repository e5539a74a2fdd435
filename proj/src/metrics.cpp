#include "spectralca/metrics.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace spectralca {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {
    if (num_classes == 0) throw std::invalid_argument("ConfusionMatrix: num_classes must be >= 1");
}

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes, std::vector<std::uint64_t> counts)
    : k_(num_classes), counts_(std::move(counts)) {
    if (num_classes == 0) throw std::invalid_argument("ConfusionMatrix: num_classes must be >= 1");
    if (counts_.size() != k_ * k_) {
        throw std::invalid_argument("ConfusionMatrix: expected " + std::to_string(k_ * k_) + " counts, got " +
                                    std::to_string(counts_.size()));
    }
}

ConfusionMatrix ConfusionMatrix::from_pairs(std::size_t num_classes, const std::vector<std::size_t>& truth,
                                            const std::vector<std::size_t>& predicted) {
    if (truth.size() != predicted.size()) throw std::invalid_argument("ConfusionMatrix: pair count mismatch");
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
    return cm;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t n) {
    if (truth >= k_ || predicted >= k_) {
        throw std::out_of_range("ConfusionMatrix: class index out of range (" + std::to_string(truth) + ", " +
                                std::to_string(predicted) + ") for " + std::to_string(k_) + " classes");
    }
    counts_[truth * k_ + predicted] += n;
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::row_total(std::size_t c) const {
    std::uint64_t n = 0;
    for (std::size_t j = 0; j < k_; ++j) n += at(c, j);
    return n;
}

std::uint64_t ConfusionMatrix::col_total(std::size_t c) const {
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < k_; ++i) n += at(i, c);
    return n;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t n = 0;
    for (std::size_t c = 0; c < k_; ++c) n += at(c, c);
    return n;
}

namespace {

void require_samples(const ConfusionMatrix& cm, const char* what) {
    if (cm.total() == 0) throw std::invalid_argument(std::string(what) + ": confusion matrix is empty");
}

}  // namespace

double overall_accuracy(const ConfusionMatrix& cm) {
    require_samples(cm, "overall_accuracy");
    return static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
}

std::vector<std::optional<double>> per_class_accuracy(const ConfusionMatrix& cm) {
    std::vector<std::optional<double>> out(cm.num_classes());
    for (std::size_t c = 0; c < cm.num_classes(); ++c) {
        const std::uint64_t row = cm.row_total(c);
        if (row > 0) out[c] = static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
    }
    return out;
}

double average_accuracy(const ConfusionMatrix& cm) {
    require_samples(cm, "average_accuracy");
    double sum = 0;
    std::size_t n = 0;
    for (const auto& r : per_class_accuracy(cm)) {
        if (r) {
            sum += *r;
            ++n;
        }
    }
    return sum / static_cast<double>(n);
}

double kappa(const ConfusionMatrix& cm) {
    require_samples(cm, "kappa");
    // (N * trace - sum r_c c_c) / (N^2 - sum r_c c_c), in exact integers
    using Wide = __int128;
    const auto n = static_cast<Wide>(cm.total());
    Wide chance = 0;
    for (std::size_t c = 0; c < cm.num_classes(); ++c) {
        chance += static_cast<Wide>(cm.row_total(c)) * static_cast<Wide>(cm.col_total(c));
    }
    const Wide num = n * static_cast<Wide>(cm.trace()) - chance;
    const Wide den = n * n - chance;
    if (den == 0) {
        if (num == 0 && static_cast<Wide>(cm.trace()) == n) return 1.0;
        throw std::domain_error("kappa: degenerate marginals");
    }
    return static_cast<double>(num) / static_cast<double>(den);
}

ObjectiveWeights::ObjectiveWeights(double l1, double l2, double l3, double t_ref_, double p_ref_)
    : lambda_error(l1), lambda_time(l2), lambda_params(l3), t_ref(t_ref_), p_ref(p_ref_) {
    validate();
}

void ObjectiveWeights::validate() const {
    if (lambda_error < 0 || lambda_time < 0 || lambda_params < 0) {
        throw std::invalid_argument("ObjectiveWeights: weights must be >= 0");
    }
    if (std::abs(lambda_error + lambda_time + lambda_params - 1.0) > 1e-9) {
        throw std::invalid_argument("ObjectiveWeights: weights must sum to 1");
    }
    if (!(t_ref > 0) || !(p_ref > 0)) throw std::invalid_argument("ObjectiveWeights: T_ref and P_ref must be > 0");
}

double objective_j(double error, double seconds, double params_millions, const ObjectiveWeights& w) {
    w.validate();
    return w.lambda_error * error + w.lambda_time * seconds / w.t_ref + w.lambda_params * params_millions / w.p_ref;
}

EvalReport make_report(const ConfusionMatrix& cm, double infer_time_s, double params_millions,
                       const std::optional<ObjectiveWeights>& weights) {
    EvalReport r;
    r.oa = overall_accuracy(cm);
    r.aa = average_accuracy(cm);
    r.kappa = kappa(cm);
    r.per_class = per_class_accuracy(cm);
    r.infer_time_s = infer_time_s;
    r.params_millions = params_millions;
    r.samples = cm.total();
    for (const auto& c : r.per_class) r.empty_classes += c ? 0 : 1;
    if (weights) r.objective_j = objective_j(1.0 - r.oa, infer_time_s, params_millions, *weights);
    return r;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& c : r.per_class) per_class.push_back(c ? nlohmann::json(*c) : nlohmann::json(nullptr));
    j = nlohmann::json{{"oa", r.oa},
                       {"aa", r.aa},
                       {"kappa", r.kappa},
                       {"per_class", per_class},
                       {"infer_time_s", r.infer_time_s},
                       {"params_millions", r.params_millions},
                       {"objective_j", r.objective_j ? nlohmann::json(*r.objective_j) : nlohmann::json(nullptr)},
                       {"samples", r.samples},
                       {"aa_excluded_empty_classes", r.empty_classes}};
}

}  // namespace spectralca
