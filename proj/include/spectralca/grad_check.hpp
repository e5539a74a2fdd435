#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spectralca/autodiff.hpp"

namespace spectralca {

struct GradCheckOptions {
    double step = 1e-4;
    double tolerance = 1e-4;
    /// Elements checked per parameter; parameters with fewer are checked exhaustively.
    std::size_t samples_per_parameter = 200;
    std::uint64_t seed = 0;
};

struct ParameterCheck {
    std::string name;
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

struct GradCheckReport {
    std::vector<ParameterCheck> parameters;
    double max_rel_error = 0.0;
    double tolerance = 0.0;

    bool passed() const { return max_rel_error <= tolerance; }
};

/// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);

/// Scalar-valued computation rebuilt from scratch on every call.
using ScalarFunction = std::function<Var<double>(Tape<double>&)>;

/// Compares tape gradients of `f` against central finite differences
/// (f(θ+h) - f(θ-h)) / 2h for sampled elements of every parameter.
/// `f` must be deterministic; parameter gradients are overwritten.
GradCheckReport grad_check(const ScalarFunction& f, std::span<Parameter<double>* const> parameters,
                           const GradCheckOptions& options = {});

}  // namespace spectralca
