#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "spectralca/autodiff.hpp"
#include "spectralca/nn.hpp"

namespace testing {

using spectralca::Shape;
using spectralca::Tensor;

template <typename T = double>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<T> t(shape);
    for (auto& v : t.data()) v = static_cast<T>(u(rng));
    return t;
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

inline void randomize(std::vector<spectralca::Parameter<double>*> params, std::mt19937_64& rng, double scale = 0.5) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto* p : params) {
        for (auto& v : p->value.data()) v = u(rng);
    }
}

// Naive cross-correlation, zero padding, odd kernel extents; x [B,Ci,H,W,D], w [Co,Ci,kh,kw,kd].
inline Tensor<double> naive_conv3d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const std::size_t B = xs[0], Ci = xs[1], H = xs[2], W = xs[3], D = xs[4];
    const std::size_t Co = ws[0], kh = ws[2], kw = ws[3], kd = ws[4];
    Tensor<double> y({B, Co, H, W, D});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t o = 0; o < Co; ++o)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j)
                    for (std::size_t k = 0; k < D; ++k) {
                        double s = b[o];
                        for (std::size_t c = 0; c < Ci; ++c)
                            for (std::size_t a = 0; a < kh; ++a)
                                for (std::size_t e = 0; e < kw; ++e)
                                    for (std::size_t f = 0; f < kd; ++f) {
                                        const long ii = long(i + a) - long(kh / 2);
                                        const long jj = long(j + e) - long(kw / 2);
                                        const long kk = long(k + f) - long(kd / 2);
                                        if (ii < 0 || jj < 0 || kk < 0 || ii >= long(H) || jj >= long(W) ||
                                            kk >= long(D))
                                            continue;
                                        s += x.at({n, c, std::size_t(ii), std::size_t(jj), std::size_t(kk)}) *
                                             w.at({o, c, a, e, f});
                                    }
                        y.at({n, o, i, j, k}) = s;
                    }
    return y;
}

}  // namespace testing
