#include "spectralca/nn.hpp"

#include <algorithm>
#include <cmath>

#include "gemm.hpp"

namespace spectralca {

template <typename T>
void kaiming_uniform(Parameter<T>& p, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (T& v : p.value.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
LinearLayer<T>::LinearLayer(const std::string& name, std::size_t in, std::size_t out)
    : weight(name + ".weight", Tensor<T>({out, in})), bias(name + ".bias", Tensor<T>({out})) {}

template <typename T>
void LinearLayer<T>::reset(Rng& rng) {
    kaiming_uniform(weight, in_features(), rng);
    bias.value.fill(T(0));
}

template <typename T>
Conv2DLayer<T>::Conv2DLayer(const std::string& name, std::size_t in, std::size_t out)
    : weight(name + ".weight", Tensor<T>({out, in, 3, 3})), bias(name + ".bias", Tensor<T>({out})) {}

template <typename T>
void Conv2DLayer<T>::reset(Rng& rng) {
    kaiming_uniform(weight, weight.value.shape()[1] * 9, rng);
    bias.value.fill(T(0));
}

template <typename T>
Conv3DLayer<T>::Conv3DLayer(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel)
    : weight(name + ".weight", Tensor<T>({out, in, kernel, kernel, kernel})), bias(name + ".bias", Tensor<T>({out})) {
    if (kernel != 1 && kernel != 3) throw ShapeError("Conv3DLayer: kernel must be 1 or 3");
}

template <typename T>
void Conv3DLayer<T>::reset(Rng& rng) {
    const std::size_t k = kernel();
    kaiming_uniform(weight, weight.value.shape()[1] * k * k * k, rng);
    bias.value.fill(T(0));
}

template <typename T>
BatchNormLayer<T>::BatchNormLayer(const std::string& name, std::size_t channels)
    : gamma(name + ".weight", Tensor<T>({channels}, T(1))),
      beta(name + ".bias", Tensor<T>({channels})),
      running_mean(name + ".running_mean", Tensor<T>({channels})),
      running_var(name + ".running_var", Tensor<T>({channels}, T(1))) {}

template <typename T>
LayerNormLayer<T>::LayerNormLayer(const std::string& name, std::size_t dim)
    : gamma(name + ".weight", Tensor<T>({dim}, T(1))), beta(name + ".bias", Tensor<T>({dim})) {}

namespace {

struct ConvGeometry {
    std::size_t batch, c_in, c_out, h, w, d, kh, kw, kd;
    std::size_t volume() const { return h * w * d; }
    std::size_t patch() const { return c_in * kh * kw * kd; }
};

// Column matrix [c_in * kh * kw * kd, h * w * d] for one sample; zero padding.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
    const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(g.kh / 2);
    const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(g.kw / 2);
    const std::ptrdiff_t pd = static_cast<std::ptrdiff_t>(g.kd / 2);
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(g.h);
    const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(g.w);
    const std::ptrdiff_t D = static_cast<std::ptrdiff_t>(g.d);
    T* row = col;
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        const T* xc = x + ci * g.volume();
        for (std::ptrdiff_t a = 0; a < static_cast<std::ptrdiff_t>(g.kh); ++a) {
            for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(g.kw); ++b) {
                for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(g.kd); ++c) {
                    const std::ptrdiff_t d_lo = std::max<std::ptrdiff_t>(0, pd - c);
                    const std::ptrdiff_t d_hi = std::min<std::ptrdiff_t>(D, D + pd - c);
                    for (std::ptrdiff_t i = 0; i < H; ++i) {
                        const std::ptrdiff_t hs = i + a - ph;
                        for (std::ptrdiff_t j = 0; j < W; ++j) {
                            T* out = row + (i * W + j) * D;
                            const std::ptrdiff_t ws = j + b - pw;
                            if (hs < 0 || hs >= H || ws < 0 || ws >= W) {
                                std::fill(out, out + D, T(0));
                                continue;
                            }
                            const std::ptrdiff_t base = (hs * W + ws) * D + (c - pd);
                            for (std::ptrdiff_t k = 0; k < d_lo; ++k) out[k] = T(0);
                            for (std::ptrdiff_t k = d_lo; k < d_hi; ++k) out[k] = xc[base + k];
                            for (std::ptrdiff_t k = std::max(d_hi, d_lo); k < D; ++k) out[k] = T(0);
                        }
                    }
                    row += g.volume();
                }
            }
        }
    }
}

// Adjoint of im2col: scatters-adds column entries back into dx for one sample.
template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
    const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(g.kh / 2);
    const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(g.kw / 2);
    const std::ptrdiff_t pd = static_cast<std::ptrdiff_t>(g.kd / 2);
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(g.h);
    const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(g.w);
    const std::ptrdiff_t D = static_cast<std::ptrdiff_t>(g.d);
    const T* row = col;
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        T* xc = dx + ci * g.volume();
        for (std::ptrdiff_t a = 0; a < static_cast<std::ptrdiff_t>(g.kh); ++a) {
            for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(g.kw); ++b) {
                for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(g.kd); ++c) {
                    const std::ptrdiff_t d_lo = std::max<std::ptrdiff_t>(0, pd - c);
                    const std::ptrdiff_t d_hi = std::min<std::ptrdiff_t>(D, D + pd - c);
                    for (std::ptrdiff_t i = 0; i < H; ++i) {
                        const std::ptrdiff_t hs = i + a - ph;
                        if (hs < 0 || hs >= H) continue;
                        for (std::ptrdiff_t j = 0; j < W; ++j) {
                            const std::ptrdiff_t ws = j + b - pw;
                            if (ws < 0 || ws >= W) continue;
                            const T* in = row + (i * W + j) * D;
                            const std::ptrdiff_t base = (hs * W + ws) * D + (c - pd);
                            for (std::ptrdiff_t k = d_lo; k < d_hi; ++k) xc[base + k] += in[k];
                        }
                    }
                    row += g.volume();
                }
            }
        }
    }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

template <typename T>
T sigmoid(T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

}  // namespace

template <typename T>
Var<T> conv3d(Var<T> x, Var<T> w, Var<T> b) {
    const Tensor<T>& xv = x.value();
    const Tensor<T>& wv = w.value();
    const Tensor<T>& bv = b.value();
    if (xv.rank() != 5 || wv.rank() != 5 || bv.rank() != 1) {
        throw ShapeError("conv3d: expected x [B,C,H,W,D], w [O,C,k,k,k], b [O]; got " + shape_str(xv.shape()) + ", " +
                         shape_str(wv.shape()) + ", " + shape_str(bv.shape()));
    }
    const auto& xs = xv.shape();
    const auto& ws = wv.shape();
    if (ws[1] != xs[1]) {
        throw ShapeError("conv3d: channel mismatch, input has " + std::to_string(xs[1]) + " channels, kernel expects " +
                         std::to_string(ws[1]));
    }
    if (bv.shape()[0] != ws[0]) throw ShapeError("conv3d: bias length != output channels");
    if (ws[2] % 2 == 0 || ws[3] % 2 == 0 || ws[4] % 2 == 0) throw ShapeError("conv3d: kernel extents must be odd");

    const ConvGeometry g{xs[0], xs[1], ws[0], xs[2], xs[3], xs[4], ws[2], ws[3], ws[4]};
    const bool pointwise = g.kh == 1 && g.kw == 1 && g.kd == 1;
    const std::size_t vol = g.volume();
    const std::size_t kdim = g.patch();
    Tensor<T> out({g.batch, g.c_out, g.h, g.w, g.d});
    std::vector<T> col(pointwise ? 0 : kdim * vol);
    for (std::size_t n = 0; n < g.batch; ++n) {
        const T* xn = xv.ptr() + n * g.c_in * vol;
        const T* cols = xn;
        if (!pointwise) {
            im2col(xn, g, col.data());
            cols = col.data();
        }
        T* yn = out.ptr() + n * g.c_out * vol;
        for (std::size_t o = 0; o < g.c_out; ++o) std::fill(yn + o * vol, yn + (o + 1) * vol, bv[o]);
        detail::gemm(false, false, g.c_out, vol, kdim, T(1), wv.ptr(), kdim, cols, vol, T(1), yn, vol);
    }
    return x.tape->record("conv3d", std::move(out), {x, w, b}, [x, w, b, g, pointwise](Tape<T>& t, const Tensor<T>& gy) {
        const Tensor<T>& xv = t.value(x.id);
        const Tensor<T>& wv = t.value(w.id);
        const std::size_t vol = g.volume();
        const std::size_t kdim = g.patch();
        const bool need_x = t.requires_grad(x);
        const bool need_w = t.requires_grad(w);
        const bool need_b = t.requires_grad(b);
        std::vector<T> col(pointwise ? 0 : kdim * vol);
        std::vector<T> dcol(pointwise || !need_x ? 0 : kdim * vol);
        for (std::size_t n = 0; n < g.batch; ++n) {
            const T* xn = xv.ptr() + n * g.c_in * vol;
            const T* gn = gy.ptr() + n * g.c_out * vol;
            if (need_b) {
                Tensor<T>& gb = t.grad_buffer(b.id);
                for (std::size_t o = 0; o < g.c_out; ++o) {
                    T acc = 0;
                    for (std::size_t v = 0; v < vol; ++v) acc += gn[o * vol + v];
                    gb[o] += acc;
                }
            }
            if (need_w) {
                const T* cols = xn;
                if (!pointwise) {
                    im2col(xn, g, col.data());
                    cols = col.data();
                }
                detail::gemm(false, true, g.c_out, kdim, vol, T(1), gn, vol, cols, vol, T(1),
                             t.grad_buffer(w.id).ptr(), kdim);
            }
            if (need_x) {
                T* dxn = t.grad_buffer(x.id).ptr() + n * g.c_in * vol;
                if (pointwise) {
                    detail::gemm(true, false, kdim, vol, g.c_out, T(1), wv.ptr(), kdim, gn, vol, T(1), dxn, vol);
                } else {
                    detail::gemm(true, false, kdim, vol, g.c_out, T(1), wv.ptr(), kdim, gn, vol, T(0), dcol.data(), vol);
                    col2im_add(dcol.data(), g, dxn);
                }
            }
        }
    });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b) {
    const Shape xs = x.shape();
    const Shape ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4) {
        throw ShapeError("conv2d: expected x [B,C,H,W] and w [O,C,k,k]; got " + shape_str(xs) + ", " + shape_str(ws));
    }
    Var<T> x5 = reshape(x, Shape{xs[0], xs[1], xs[2], xs[3], 1});
    Var<T> w5 = reshape(w, Shape{ws[0], ws[1], ws[2], ws[3], 1});
    Var<T> y = conv3d(x5, w5, b);
    return reshape(y, Shape{xs[0], ws[0], xs[2], xs[3]});
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    const Tensor<T>& xv = x.value();
    const Tensor<T>& wv = w.value();
    const Tensor<T>& bv = b.value();
    if (xv.rank() < 1 || wv.rank() != 2 || bv.rank() != 1) throw ShapeError("linear: bad ranks");
    const std::size_t in = wv.shape()[1];
    const std::size_t out_dim = wv.shape()[0];
    if (xv.shape().back() != in) {
        throw ShapeError("linear: input feature extent " + std::to_string(xv.shape().back()) + " != " +
                         std::to_string(in));
    }
    if (bv.shape()[0] != out_dim) throw ShapeError("linear: bias length != output features");
    const std::size_t rows = xv.numel() / std::max<std::size_t>(in, 1);
    Shape out_shape = xv.shape();
    out_shape.back() = out_dim;
    Tensor<T> out(out_shape);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(bv.ptr(), out_dim, out.ptr() + r * out_dim);
    detail::gemm(false, true, rows, out_dim, in, T(1), xv.ptr(), in, wv.ptr(), in, T(1), out.ptr(), out_dim);
    return x.tape->record("linear", std::move(out), {x, w, b}, [x, w, b, rows, in, out_dim](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv = t.value(x.id);
        const Tensor<T>& wv = t.value(w.id);
        if (t.requires_grad(x)) {
            detail::gemm(false, false, rows, in, out_dim, T(1), g.ptr(), out_dim, wv.ptr(), in, T(1),
                         t.grad_buffer(x.id).ptr(), in);
        }
        if (t.requires_grad(w)) {
            detail::gemm(true, false, out_dim, in, rows, T(1), g.ptr(), out_dim, xv.ptr(), in, T(1),
                         t.grad_buffer(w.id).ptr(), in);
        }
        if (t.requires_grad(b)) {
            Tensor<T>& gb = t.grad_buffer(b.id);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[r * out_dim + o];
        }
    });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
    const Tensor<T>& xv = x.value();
    if (xv.rank() < 1) throw ShapeError("layer_norm: scalar input");
    const std::size_t dim = xv.shape().back();
    if (gamma.value().numel() != dim || beta.value().numel() != dim) {
        throw ShapeError("layer_norm: affine extent != last axis " + std::to_string(dim));
    }
    const std::size_t rows = xv.numel() / std::max<std::size_t>(dim, 1);
    const T* gm = gamma.value().ptr();
    const T* bt = beta.value().ptr();
    Tensor<T> out(xv.shape());
    std::vector<T> xhat(xv.numel());
    std::vector<T> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xv.ptr() + r * dim;
        T mean = 0;
        for (std::size_t i = 0; i < dim; ++i) mean += xr[i];
        mean /= static_cast<T>(dim);
        T var = 0;
        for (std::size_t i = 0; i < dim; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= static_cast<T>(dim);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t i = 0; i < dim; ++i) {
            const T xh = (xr[i] - mean) * is;
            xhat[r * dim + i] = xh;
            out[r * dim + i] = gm[i] * xh + bt[i];
        }
    }
    return x.tape->record(
        "layer_norm", std::move(out), {x, gamma, beta},
        [x, gamma, beta, rows, dim, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t,
                                                                                          const Tensor<T>& g) {
            const T* gm = t.value(gamma.id).ptr();
            if (t.requires_grad(gamma) || t.requires_grad(beta)) {
                Tensor<T>& gg = t.grad_buffer(gamma.id);
                Tensor<T>& gbt = t.grad_buffer(beta.id);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t i = 0; i < dim; ++i) {
                        gg[i] += g[r * dim + i] * xhat[r * dim + i];
                        gbt[i] += g[r * dim + i];
                    }
                }
            }
            if (!t.requires_grad(x)) return;
            T* gx = t.grad_buffer(x.id).ptr();
            const T n = static_cast<T>(dim);
            for (std::size_t r = 0; r < rows; ++r) {
                T sum_dxh = 0, sum_dxh_xh = 0;
                for (std::size_t i = 0; i < dim; ++i) {
                    const T dxh = g[r * dim + i] * gm[i];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xhat[r * dim + i];
                }
                for (std::size_t i = 0; i < dim; ++i) {
                    const T dxh = g[r * dim + i] * gm[i];
                    gx[r * dim + i] += inv_std[r] / n * (n * dxh - sum_dxh - xhat[r * dim + i] * sum_dxh_xh);
                }
            }
        });
}

template <typename T>
Var<T> silu(Var<T> x) {
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * sigmoid(xv[i]);
    return x.tape->record("silu", std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv = t.value(x.id);
        Tensor<T>& gx = t.grad_buffer(x.id);
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const T s = sigmoid(xv[i]);
            gx[i] += g[i] * s * (T(1) + xv[i] * (T(1) - s));
        }
    });
}

template <typename T>
Var<T> relu(Var<T> x) {
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
    return x.tape->record("relu", std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv = t.value(x.id);
        Tensor<T>& gx = t.grad_buffer(x.id);
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (xv[i] > T(0)) gx[i] += g[i];
    });
}

template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis) {
    const Tensor<T>& xv = x.value();
    if (axis >= xv.rank()) throw ShapeError("softmax: axis out of range for " + shape_str(xv.shape()));
    std::size_t outer = 1, inner = 1;
    const std::size_t extent = xv.shape()[axis];
    for (std::size_t i = 0; i < axis; ++i) outer *= xv.shape()[i];
    for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.shape()[i];
    Tensor<T> out(xv.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * extent * inner + in;
            T mx = xv[base];
            for (std::size_t e = 1; e < extent; ++e) mx = std::max(mx, xv[base + e * inner]);
            T sum = 0;
            for (std::size_t e = 0; e < extent; ++e) {
                const T v = std::exp(xv[base + e * inner] - mx);
                out[base + e * inner] = v;
                sum += v;
            }
            for (std::size_t e = 0; e < extent; ++e) out[base + e * inner] /= sum;
        }
    }
    Tensor<T> y = out;
    return x.tape->record("softmax", std::move(out), {x},
                          [x, outer, inner, extent, y = std::move(y)](Tape<T>& t, const Tensor<T>& g) {
                              Tensor<T>& gx = t.grad_buffer(x.id);
                              for (std::size_t o = 0; o < outer; ++o) {
                                  for (std::size_t in = 0; in < inner; ++in) {
                                      const std::size_t base = o * extent * inner + in;
                                      T dot = 0;
                                      for (std::size_t e = 0; e < extent; ++e)
                                          dot += g[base + e * inner] * y[base + e * inner];
                                      for (std::size_t e = 0; e < extent; ++e) {
                                          const std::size_t k = base + e * inner;
                                          gx[k] += y[k] * (g[k] - dot);
                                      }
                                  }
                              }
                          });
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, bool training, Rng* rng) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
    if (!training || rate == 0.0) return x;
    if (rng == nullptr) throw std::invalid_argument("dropout: training mode needs a random stream");
    const Tensor<T>& xv = x.value();
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor<T> mask(xv.shape());
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) {
        mask[i] = u(*rng) < rate ? T(0) : keep_scale;
        out[i] = xv[i] * mask[i];
    }
    return x.tape->record("dropout", std::move(out), {x}, [x, mask = std::move(mask)](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& gx = t.grad_buffer(x.id);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * mask[i];
    });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<std::size_t>& labels) {
    const Tensor<T>& lv = logits.value();
    if (lv.rank() != 2) throw ShapeError("cross_entropy: logits must be [B, classes], got " + shape_str(lv.shape()));
    const std::size_t batch = lv.shape()[0];
    const std::size_t classes = lv.shape()[1];
    if (labels.size() != batch) throw ShapeError("cross_entropy: label count != batch");
    if (batch == 0) throw ShapeError("cross_entropy: empty batch");
    Tensor<T> probs(lv.shape());
    T loss = 0;
    for (std::size_t n = 0; n < batch; ++n) {
        if (labels[n] >= classes) {
            throw std::out_of_range("cross_entropy: label " + std::to_string(labels[n]) + " >= " +
                                    std::to_string(classes));
        }
        const T* row = lv.ptr() + n * classes;
        const T mx = *std::max_element(row, row + classes);
        T sum = 0;
        for (std::size_t c = 0; c < classes; ++c) sum += std::exp(row[c] - mx);
        const T log_sum = std::log(sum);
        for (std::size_t c = 0; c < classes; ++c) probs[n * classes + c] = std::exp(row[c] - mx - log_sum);
        loss -= row[labels[n]] - mx - log_sum;
    }
    loss /= static_cast<T>(batch);
    return logits.tape->record("cross_entropy", Tensor<T>::scalar(loss), {logits},
                               [logits, labels, probs = std::move(probs), batch, classes](Tape<T>& t,
                                                                                          const Tensor<T>& g) {
                                   Tensor<T>& gl = t.grad_buffer(logits.id);
                                   const T s = g[0] / static_cast<T>(batch);
                                   for (std::size_t n = 0; n < batch; ++n) {
                                       for (std::size_t c = 0; c < classes; ++c) {
                                           const T onehot = c == labels[n] ? T(1) : T(0);
                                           gl[n * classes + c] += s * (probs[n * classes + c] - onehot);
                                       }
                                   }
                               });
}

template <typename T>
Var<T> linear(LinearLayer<T>& layer, Var<T> x) {
    Tape<T>& t = *x.tape;
    return linear(x, t.param(layer.weight), t.param(layer.bias));
}

template <typename T>
Var<T> conv2d(Conv2DLayer<T>& layer, Var<T> x) {
    Tape<T>& t = *x.tape;
    return conv2d(x, t.param(layer.weight), t.param(layer.bias));
}

template <typename T>
Var<T> conv3d(Conv3DLayer<T>& layer, Var<T> x) {
    Tape<T>& t = *x.tape;
    return conv3d(x, t.param(layer.weight), t.param(layer.bias));
}

template <typename T>
Var<T> layer_norm(LayerNormLayer<T>& layer, Var<T> x) {
    Tape<T>& t = *x.tape;
    return layer_norm(x, t.param(layer.gamma), t.param(layer.beta), layer.eps);
}

template <typename T>
Var<T> batch_norm(BatchNormLayer<T>& layer, Var<T> x, bool training) {
    Tape<T>& tape = *x.tape;
    Var<T> gamma = tape.param(layer.gamma);
    Var<T> beta = tape.param(layer.beta);
    const Tensor<T>& xv = x.value();
    if (xv.rank() < 2) throw ShapeError("batch_norm: input must have a channel axis");
    const std::size_t batch = xv.shape()[0];
    const std::size_t channels = xv.shape()[1];
    if (channels != layer.gamma.value.numel()) {
        throw ShapeError("batch_norm: input has " + std::to_string(channels) + " channels, layer expects " +
                         std::to_string(layer.gamma.value.numel()));
    }
    const std::size_t spatial = xv.numel() / std::max<std::size_t>(batch * channels, 1);
    const std::size_t count = batch * spatial;
    std::vector<T> mean(channels), inv_std(channels);
    if (training) {
        if (count <= 1) throw ShapeError("batch_norm: training needs more than one value per channel");
        for (std::size_t c = 0; c < channels; ++c) {
            T m = 0;
            for (std::size_t n = 0; n < batch; ++n) {
                const T* p = xv.ptr() + (n * channels + c) * spatial;
                for (std::size_t s = 0; s < spatial; ++s) m += p[s];
            }
            m /= static_cast<T>(count);
            T v = 0;
            for (std::size_t n = 0; n < batch; ++n) {
                const T* p = xv.ptr() + (n * channels + c) * spatial;
                for (std::size_t s = 0; s < spatial; ++s) v += (p[s] - m) * (p[s] - m);
            }
            v /= static_cast<T>(count);
            mean[c] = m;
            inv_std[c] = T(1) / std::sqrt(v + layer.eps);
            layer.running_mean.value[c] = (T(1) - layer.momentum) * layer.running_mean.value[c] + layer.momentum * m;
            layer.running_var.value[c] = (T(1) - layer.momentum) * layer.running_var.value[c] + layer.momentum * v;
        }
    } else {
        for (std::size_t c = 0; c < channels; ++c) {
            mean[c] = layer.running_mean.value[c];
            inv_std[c] = T(1) / std::sqrt(layer.running_var.value[c] + layer.eps);
        }
    }
    const T* gm = layer.gamma.value.ptr();
    const T* bt = layer.beta.value.ptr();
    Tensor<T> out(xv.shape());
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t off = (n * channels + c) * spatial;
            for (std::size_t s = 0; s < spatial; ++s) {
                out[off + s] = gm[c] * (xv[off + s] - mean[c]) * inv_std[c] + bt[c];
            }
        }
    }
    return tape.record(
        "batch_norm", std::move(out), {x, gamma, beta},
        [x, gamma, beta, training, batch, channels, spatial, count, mean = std::move(mean),
         inv_std = std::move(inv_std)](Tape<T>& t, const Tensor<T>& g) {
            const Tensor<T>& xv = t.value(x.id);
            const T* gm = t.value(gamma.id).ptr();
            const bool need_x = t.requires_grad(x);
            const bool need_affine = t.requires_grad(gamma) || t.requires_grad(beta);
            for (std::size_t c = 0; c < channels; ++c) {
                T sum_g = 0, sum_g_xh = 0;
                for (std::size_t n = 0; n < batch; ++n) {
                    const std::size_t off = (n * channels + c) * spatial;
                    for (std::size_t s = 0; s < spatial; ++s) {
                        const T xh = (xv[off + s] - mean[c]) * inv_std[c];
                        sum_g += g[off + s];
                        sum_g_xh += g[off + s] * xh;
                    }
                }
                if (need_affine) {
                    t.grad_buffer(gamma.id)[c] += sum_g_xh;
                    t.grad_buffer(beta.id)[c] += sum_g;
                }
                if (!need_x) continue;
                T* gx = t.grad_buffer(x.id).ptr();
                const T scale = gm[c] * inv_std[c];
                const T cnt = static_cast<T>(count);
                for (std::size_t n = 0; n < batch; ++n) {
                    const std::size_t off = (n * channels + c) * spatial;
                    for (std::size_t s = 0; s < spatial; ++s) {
                        if (training) {
                            const T xh = (xv[off + s] - mean[c]) * inv_std[c];
                            gx[off + s] += scale / cnt * (cnt * g[off + s] - sum_g - xh * sum_g_xh);
                        } else {
                            gx[off + s] += scale * g[off + s];
                        }
                    }
                }
            }
        });
}

#define SPECTRALCA_INSTANTIATE_NN(T)                                                         \
    template void kaiming_uniform<T>(Parameter<T>&, std::size_t, Rng&);                      \
    template struct LinearLayer<T>;                                                          \
    template struct Conv2DLayer<T>;                                                          \
    template struct Conv3DLayer<T>;                                                          \
    template struct BatchNormLayer<T>;                                                       \
    template struct LayerNormLayer<T>;                                                       \
    template Var<T> conv3d<T>(Var<T>, Var<T>, Var<T>);                                       \
    template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>);                                       \
    template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                                       \
    template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                                \
    template Var<T> silu<T>(Var<T>);                                                         \
    template Var<T> relu<T>(Var<T>);                                                         \
    template Var<T> softmax<T>(Var<T>, std::size_t);                                         \
    template Var<T> dropout<T>(Var<T>, double, bool, Rng*);                                  \
    template Var<T> cross_entropy<T>(Var<T>, const std::vector<std::size_t>&);               \
    template Var<T> linear<T>(LinearLayer<T>&, Var<T>);                                      \
    template Var<T> conv2d<T>(Conv2DLayer<T>&, Var<T>);                                      \
    template Var<T> conv3d<T>(Conv3DLayer<T>&, Var<T>);                                      \
    template Var<T> layer_norm<T>(LayerNormLayer<T>&, Var<T>);                               \
    template Var<T> batch_norm<T>(BatchNormLayer<T>&, Var<T>, bool);

SPECTRALCA_INSTANTIATE_NN(float)
SPECTRALCA_INSTANTIATE_NN(double)

}  // namespace spectralca
