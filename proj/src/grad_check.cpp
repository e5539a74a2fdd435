#include "spectralca/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace spectralca {

double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace {

double evaluate(const ScalarFunction& f) {
    Tape<double> tape(false);
    const double v = f(tape).value().item();
    if (!std::isfinite(v)) throw NonFiniteError("grad_check: non-finite objective");
    return v;
}

std::vector<std::size_t> sample_indices(std::size_t numel, std::size_t samples, std::mt19937_64& rng) {
    std::vector<std::size_t> all(numel);
    std::iota(all.begin(), all.end(), 0);
    if (numel <= samples) return all;
    // partial Fisher-Yates
    for (std::size_t i = 0; i < samples; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, numel - 1);
        std::swap(all[i], all[pick(rng)]);
    }
    all.resize(samples);
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, std::span<Parameter<double>* const> parameters,
                           const GradCheckOptions& options) {
    for (Parameter<double>* p : parameters) p->zero_grad();
    {
        Tape<double> tape;
        Var<double> loss = f(tape);
        if (!std::isfinite(loss.value().item())) throw NonFiniteError("grad_check: non-finite objective");
        tape.backward(loss);
    }

    GradCheckReport report;
    report.tolerance = options.tolerance;
    std::mt19937_64 rng(options.seed);
    const double h = options.step;
    for (Parameter<double>* p : parameters) {
        ParameterCheck check;
        check.name = p->name;
        for (std::size_t idx : sample_indices(p->value.numel(), options.samples_per_parameter, rng)) {
            const double original = p->value[idx];
            p->value[idx] = original + h;
            const double plus = evaluate(f);
            p->value[idx] = original - h;
            const double minus = evaluate(f);
            p->value[idx] = original;
            const double numeric = (plus - minus) / (2.0 * h);
            const double analytic = p->grad[idx];
            if (!std::isfinite(analytic)) throw NonFiniteError("grad_check: non-finite gradient in " + p->name);
            const double err = relative_error(analytic, numeric);
            ++check.checked;
            if (err >= check.max_rel_error) {
                check.max_rel_error = err;
                check.worst_index = idx;
                check.worst_analytic = analytic;
                check.worst_numeric = numeric;
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
        report.parameters.push_back(std::move(check));
    }
    return report;
}

}  // namespace spectralca
