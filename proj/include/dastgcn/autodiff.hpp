#pragma once

// Tape-based reverse-mode autodiff over dense double tensors. Ops run eagerly
// and, while the tape is recording, push a closure that knows how to chain the
// output gradient back onto the inputs. One reverse sweep of the tape (which
// is already in topological order because inputs exist before their ops)
// produces the total derivative for every tensor with requires_grad set;
// fan-out accumulates additively.
//
// Kernels treat a tensor of shape [..., T, C] as independent series over the
// leading dims, which is how one call convolves a whole batch at once.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dastgcn/errors.hpp"
#include "dastgcn/tensor.hpp"

namespace dastgcn {

class Tape {
public:
    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }

    void clear() { steps_.clear(); }
    std::size_t size() const { return steps_.size(); }

    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

    // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse.
    void backward(const Tensor& loss) {
        if (loss.size() != 1)
            throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        loss.grad()[0] = 1.0;
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> steps_;
    bool recording_ = true;
};

struct NoGradScope {
    explicit NoGradScope(Tape& t) : tape(t), prev(t.recording()) { tape.set_recording(false); }
    ~NoGradScope() { tape.set_recording(prev); }
    Tape& tape;
    bool prev;
};

inline void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

namespace detail {

inline bool track(const Tape& tape, const Tensor& a) { return tape.recording() && a.requires_grad(); }
inline bool track(const Tape& tape, const Tensor& a, const Tensor& b) {
    return tape.recording() && (a.requires_grad() || b.requires_grad());
}

// Dot product with eight running lanes so the loop vectorizes without
// reassociation flags; the combine order is fixed, so results stay
// deterministic run to run.
inline double dot(const double* a, const double* b, std::size_t n) {
    double lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (int l = 0; l < 8; ++l) lane[l] += a[i + l] * b[i + l];
    for (; i < n; ++i) lane[i % 8] += a[i] * b[i];
    return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// Stack scratch for register-blocked kernels; wide enough for any realistic
// channel count, with a generic fallback above it.
constexpr int kAccWidth = 64;

// Re-invokes the kernel body with the loop width as a compile-time constant
// for the common narrow channel counts. A width of -1 selects the generic
// runtime-bound body. Narrow loops only vectorize well when the trip count is
// known to the compiler, which is worth ~4x on the block convolutions.
template <class F>
inline void with_width(int w, F&& f) {
    switch (w) {
        case 1: f(std::integral_constant<int, 1>{}); return;
        case 2: f(std::integral_constant<int, 2>{}); return;
        case 3: f(std::integral_constant<int, 3>{}); return;
        case 4: f(std::integral_constant<int, 4>{}); return;
        case 5: f(std::integral_constant<int, 5>{}); return;
        case 6: f(std::integral_constant<int, 6>{}); return;
        case 7: f(std::integral_constant<int, 7>{}); return;
        case 8: f(std::integral_constant<int, 8>{}); return;
        case 9: f(std::integral_constant<int, 9>{}); return;
        case 10: f(std::integral_constant<int, 10>{}); return;
        case 12: f(std::integral_constant<int, 12>{}); return;
        case 16: f(std::integral_constant<int, 16>{}); return;
        default: f(std::integral_constant<int, -1>{}); return;
    }
}

// series count = product of all dims before the trailing [T, C] pair.
inline std::size_t leading_series(const Tensor& x) {
    std::size_t s = 1;
    for (int i = 0; i + 2 < x.rank(); ++i) s *= static_cast<std::size_t>(x.dim(i));
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
    if (detail::track(tape, a, b)) {
        out.set_requires_grad();
        tape.record([a, b, out] {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            if (a.requires_grad()) detail::axpy(1.0, g.data(), a.grad().data(), g.size());
            if (b.requires_grad()) detail::axpy(1.0, g.data(), b.grad().data(), g.size());
        });
    }
    return out;
}

inline Tensor scale(Tape& tape, const Tensor& a, double c) {
    Tensor out(a.shape());
    const double* pa = a.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = c * pa[i];
    if (detail::track(tape, a)) {
        out.set_requires_grad();
        tape.record([a, out, c] {
            if (!out.has_grad()) return;
            detail::axpy(c, out.grad().data(), a.grad().data(), out.size());
        });
    }
    return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
    if (detail::track(tape, a, b)) {
        out.set_requires_grad();
        tape.record([a, b, out] {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                const double* pb2 = b.data();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb2[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                const double* pa2 = a.data();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa2[i];
            }
        });
    }
    return out;
}

inline Tensor tanh(Tape& tape, const Tensor& x) {
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = std::tanh(px[i]);
    if (detail::track(tape, x)) {
        out.set_requires_grad();
        tape.record([x, out] {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            auto& gx = x.grad();
            const double* y = out.data();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
        });
    }
    return out;
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) {
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = 1.0 / (1.0 + std::exp(-px[i]));
    if (detail::track(tape, x)) {
        out.set_requires_grad();
        tape.record([x, out] {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            auto& gx = x.grad();
            const double* y = out.data();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
        });
    }
    return out;
}

inline Tensor relu(Tape& tape, const Tensor& x) {
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
    if (detail::track(tape, x)) {
        out.set_requires_grad();
        tape.record([x, out] {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            auto& gx = x.grad();
            const double* px2 = x.data();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (px2[i] > 0.0) gx[i] += g[i];
        });
    }
    return out;
}

// Row-wise softmax of a 2D tensor; the row max is subtracted before
// exponentiation so large scores cannot overflow.
inline Tensor softmax_rows(Tape& tape, const Tensor& x) {
    if (x.rank() != 2)
        throw DimensionError("softmax_rows: want a 2D tensor, got " + shape_str(x.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    Tensor out(x.shape());
    for (int r = 0; r < rows; ++r) {
        const double* xr = x.data() + static_cast<std::size_t>(r) * cols;
        double* yr = out.data() + static_cast<std::size_t>(r) * cols;
        double mx = xr[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            sum += yr[c];
        }
        const double inv = 1.0 / sum;
        for (int c = 0; c < cols; ++c) yr[c] *= inv;
    }
    if (detail::track(tape, x)) {
        out.set_requires_grad();
        tape.record([x, out, rows, cols] {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            auto& gx = x.grad();
            const double* y = out.data();
            for (int r = 0; r < rows; ++r) {
                const std::size_t off = static_cast<std::size_t>(r) * cols;
                double dotgy = 0.0;
                for (int c = 0; c < cols; ++c) dotgy += g[off + c] * y[off + c];
                for (int c = 0; c < cols; ++c) gx[off + c] += y[off + c] * (g[off + c] - dotgy);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    detail::with_width(n, [&](auto width_tag) {
        constexpr int FW = decltype(width_tag)::value;
        if constexpr (FW > 0) {
            // output row held in registers across the k loop
            for (int i = 0; i < m; ++i) {
                const double* arow = pa + static_cast<std::size_t>(i) * k;
                double acc[FW];
                for (int j = 0; j < FW; ++j) acc[j] = 0.0;
                for (int kk = 0; kk < k; ++kk) {
                    const double av = arow[kk];
                    const double* brow = pb + static_cast<std::size_t>(kk) * FW;
                    for (int j = 0; j < FW; ++j) acc[j] += av * brow[j];
                }
                double* crow = po + static_cast<std::size_t>(i) * FW;
                for (int j = 0; j < FW; ++j) crow[j] = acc[j];
            }
        } else {
            for (int i = 0; i < m; ++i) {
                double* crow = po + static_cast<std::size_t>(i) * n;
                const double* arow = pa + static_cast<std::size_t>(i) * k;
                for (int kk = 0; kk < k; ++kk)
                    detail::axpy(arow[kk], pb + static_cast<std::size_t>(kk) * n, crow,
                                 static_cast<std::size_t>(n));
            }
        }
    });
    if (detail::track(tape, a, b)) {
        out.set_requires_grad();
        tape.record([a, b, out, m, k, n] {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            if (a.requires_grad()) {
                // dA = G * B^T
                auto& ga = a.grad();
                const double* pb2 = b.data();
                detail::with_width(n, [&](auto width_tag) {
                    constexpr int FW = decltype(width_tag)::value;
                    for (int i = 0; i < m; ++i) {
                        const double* grow = g + static_cast<std::size_t>(i) * n;
                        double* garow = ga.data() + static_cast<std::size_t>(i) * k;
                        for (int kk = 0; kk < k; ++kk) {
                            const double* brow = pb2 + static_cast<std::size_t>(kk) * n;
                            if constexpr (FW > 0) {
                                double acc = 0.0;
                                for (int j = 0; j < FW; ++j) acc += grow[j] * brow[j];
                                garow[kk] += acc;
                            } else {
                                garow[kk] += detail::dot(grow, brow, static_cast<std::size_t>(n));
                            }
                        }
                    }
                });
            }
            if (b.requires_grad()) {
                // dB = A^T * G
                auto& gb = b.grad();
                const double* pa2 = a.data();
                detail::with_width(n, [&](auto width_tag) {
                    constexpr int FW = decltype(width_tag)::value;
                    if constexpr (FW > 0) {
                        // row of dB held in registers across the m loop
                        for (int kk = 0; kk < k; ++kk) {
                            double acc[FW];
                            for (int j = 0; j < FW; ++j) acc[j] = 0.0;
                            for (int i = 0; i < m; ++i) {
                                const double av = pa2[static_cast<std::size_t>(i) * k + kk];
                                const double* grow = g + static_cast<std::size_t>(i) * FW;
                                for (int j = 0; j < FW; ++j) acc[j] += av * grow[j];
                            }
                            double* gbrow = gb.data() + static_cast<std::size_t>(kk) * FW;
                            for (int j = 0; j < FW; ++j) gbrow[j] += acc[j];
                        }
                    } else {
                        for (int i = 0; i < m; ++i) {
                            const double* grow = g + static_cast<std::size_t>(i) * n;
                            const double* arow = pa2 + static_cast<std::size_t>(i) * k;
                            for (int kk = 0; kk < k; ++kk)
                                detail::axpy(arow[kk], grow, gb.data() + static_cast<std::size_t>(kk) * n,
                                             static_cast<std::size_t>(n));
                        }
                    }
                });
            }
        });
    }
    return out;
}

inline Tensor transpose(Tape& tape, const Tensor& x) {
    if (x.rank() != 2)
        throw DimensionError("transpose: want a 2D tensor, got " + shape_str(x.shape()));
    const int m = x.dim(0), n = x.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
    if (detail::track(tape, x)) {
        out.set_requires_grad();
        tape.record([x, out, m, n] {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            auto& gx = x.grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    gx[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
        });
    }
    return out;
}

inline Tensor reshape(Tape& tape, const Tensor& x, std::vector<int> new_shape) {
    Tensor out(std::move(new_shape));
    if (out.size() != x.size())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(out.shape()));
    out.values() = x.values();
    if (detail::track(tape, x)) {
        out.set_requires_grad();
        tape.record([x, out] {
            if (!out.has_grad()) return;
            detail::axpy(1.0, out.grad().data(), x.grad().data(), out.size());
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// temporal ops
// ---------------------------------------------------------------------------

// Non-causal dilated 1D convolution along the second-to-last axis, applied
// independently to every leading series. x: [..., T, C_in], w: [ks, C_in,
// C_out], bias: [C_out]. Same-length output via symmetric zero padding of
// dilation*(ks-1)/2; kernel tap j reads offset (j - (ks-1)/2) * dilation.
inline Tensor conv1d_dilated(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias,
                             int dilation) {
    if (w.rank() != 3)
        throw DimensionError("conv1d_dilated: kernel must be [ks, C_in, C_out], got " +
                             shape_str(w.shape()));
    const int ks = w.dim(0), cin = w.dim(1), cout = w.dim(2);
    if (ks % 2 == 0)
        throw ConfigError("conv1d_dilated: kernel size must be odd, got " + std::to_string(ks));
    if (dilation < 1)
        throw ConfigError("conv1d_dilated: dilation must be >= 1, got " + std::to_string(dilation));
    if (x.rank() < 2 || x.dim(x.rank() - 1) != cin)
        throw DimensionError("conv1d_dilated: input " + shape_str(x.shape()) + " does not end in C_in=" +
                             std::to_string(cin));
    if (bias.rank() != 1 || bias.dim(0) != cout)
        throw DimensionError("conv1d_dilated: bias must be [C_out], got " + shape_str(bias.shape()));

    const int t_len = x.dim(x.rank() - 2);
    const std::size_t series = detail::leading_series(x);
    const int center = (ks - 1) / 2;

    std::vector<int> out_shape = x.shape();
    out_shape.back() = cout;
    Tensor out(out_shape);

    const double* px = x.data();
    const double* pw = w.data();
    const double* pbias = bias.data();
    double* po = out.data();
    detail::with_width(cout, [&](auto width_tag) {
        constexpr int FW = decltype(width_tag)::value;
        for (std::size_t s = 0; s < series; ++s) {
            const double* xs = px + s * static_cast<std::size_t>(t_len) * cin;
            double* os = po + s * static_cast<std::size_t>(t_len) * cout;
            for (int t = 0; t < t_len; ++t) {
                double* orow = os + static_cast<std::size_t>(t) * cout;
                if constexpr (FW > 0) {
                    double acc[FW];
                    for (int co = 0; co < FW; ++co) acc[co] = pbias[co];
                    for (int tap = 0; tap < ks; ++tap) {
                        const int src = t + (tap - center) * dilation;
                        if (src < 0 || src >= t_len) continue;
                        const double* xrow = xs + static_cast<std::size_t>(src) * cin;
                        const double* wtap = pw + static_cast<std::size_t>(tap) * cin * FW;
                        for (int ci = 0; ci < cin; ++ci) {
                            const double xv = xrow[ci];
                            const double* wrow = wtap + static_cast<std::size_t>(ci) * FW;
                            for (int co = 0; co < FW; ++co) acc[co] += xv * wrow[co];
                        }
                    }
                    for (int co = 0; co < FW; ++co) orow[co] = acc[co];
                } else {
                    for (int co = 0; co < cout; ++co) orow[co] = pbias[co];
                    for (int tap = 0; tap < ks; ++tap) {
                        const int src = t + (tap - center) * dilation;
                        if (src < 0 || src >= t_len) continue;
                        const double* xrow = xs + static_cast<std::size_t>(src) * cin;
                        const double* wtap = pw + static_cast<std::size_t>(tap) * cin * cout;
                        for (int ci = 0; ci < cin; ++ci)
                            detail::axpy(xrow[ci], wtap + static_cast<std::size_t>(ci) * cout, orow,
                                         static_cast<std::size_t>(cout));
                    }
                }
            }
        }
    });

    if (tape.recording() && (x.requires_grad() || w.requires_grad() || bias.requires_grad())) {
        out.set_requires_grad();
        tape.record([x, w, bias, out, dilation, ks, cin, cout, t_len, series, center] {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            const double* px2 = x.data();
            const double* pw2 = w.data();
            const bool wx = x.requires_grad(), ww = w.requires_grad(), wb = bias.requires_grad();

            if (ww || wb) {
                double* gw = ww ? w.grad().data() : nullptr;
                double* gb = wb ? bias.grad().data() : nullptr;
                detail::with_width(cout, [&](auto width_tag) {
                    constexpr int FW = decltype(width_tag)::value;
                    const int co_n = FW > 0 ? FW : cout;
                    for (std::size_t s = 0; s < series; ++s) {
                        const std::size_t xoff = s * static_cast<std::size_t>(t_len) * cin;
                        const std::size_t ooff = s * static_cast<std::size_t>(t_len) * cout;
                        for (int t = 0; t < t_len; ++t) {
                            const double* grow = g + ooff + static_cast<std::size_t>(t) * cout;
                            if (wb)
                                for (int co = 0; co < co_n; ++co) gb[co] += grow[co];
                            if (!ww) continue;
                            for (int tap = 0; tap < ks; ++tap) {
                                const int src = t + (tap - center) * dilation;
                                if (src < 0 || src >= t_len) continue;
                                const double* xrow = px2 + xoff + static_cast<std::size_t>(src) * cin;
                                double* gwtap = gw + static_cast<std::size_t>(tap) * cin * cout;
                                for (int ci = 0; ci < cin; ++ci) {
                                    const double xv = xrow[ci];
                                    double* gwrow = gwtap + static_cast<std::size_t>(ci) * cout;
                                    for (int co = 0; co < co_n; ++co) gwrow[co] += xv * grow[co];
                                }
                            }
                        }
                    }
                });
            }
            if (wx) {
                double* gx = x.grad().data();
                // tap-major transposed kernel so the inner loop runs
                // contiguously over cin
                std::vector<double> wt(static_cast<std::size_t>(ks) * cout * cin);
                for (int tap = 0; tap < ks; ++tap)
                    for (int ci = 0; ci < cin; ++ci)
                        for (int co = 0; co < cout; ++co)
                            wt[(static_cast<std::size_t>(tap) * cout + co) * cin + ci] =
                                pw2[(static_cast<std::size_t>(tap) * cin + ci) * cout + co];
                detail::with_width(cin, [&](auto width_tag) {
                    constexpr int FW = decltype(width_tag)::value;
                    for (std::size_t s = 0; s < series; ++s) {
                        const std::size_t xoff = s * static_cast<std::size_t>(t_len) * cin;
                        const std::size_t ooff = s * static_cast<std::size_t>(t_len) * cout;
                        for (int t = 0; t < t_len; ++t) {
                            const double* grow = g + ooff + static_cast<std::size_t>(t) * cout;
                            for (int tap = 0; tap < ks; ++tap) {
                                const int src = t + (tap - center) * dilation;
                                if (src < 0 || src >= t_len) continue;
                                double* gxrow = gx + xoff + static_cast<std::size_t>(src) * cin;
                                const double* wttap = wt.data() + static_cast<std::size_t>(tap) * cout * cin;
                                if constexpr (FW > 0) {
                                    double acc[FW];
                                    for (int ci = 0; ci < FW; ++ci) acc[ci] = 0.0;
                                    for (int co = 0; co < cout; ++co) {
                                        const double gv = grow[co];
                                        const double* wtrow = wttap + static_cast<std::size_t>(co) * FW;
                                        for (int ci = 0; ci < FW; ++ci) acc[ci] += gv * wtrow[ci];
                                    }
                                    for (int ci = 0; ci < FW; ++ci) gxrow[ci] += acc[ci];
                                } else {
                                    for (int co = 0; co < cout; ++co)
                                        detail::axpy(grow[co], wttap + static_cast<std::size_t>(co) * cin,
                                                     gxrow, static_cast<std::size_t>(cin));
                                }
                            }
                        }
                    }
                });
            }
        });
    }
    return out;
}

namespace detail {
// Forward difference with the final value replicated, so the output keeps
// length T: d[t] = x[t+1] - x[t] for t < T-1, d[T-1] = d[T-2].
inline void forward_diff(const double* x, double* d, int t_len) {
    for (int t = 0; t + 1 < t_len; ++t) d[t] = x[t + 1] - x[t];
    d[t_len - 1] = t_len >= 2 ? d[t_len - 2] : 0.0;
}
// Transpose of forward_diff, used to push gradients back through it.
inline void forward_diff_adjoint(const double* g, double* acc, int t_len) {
    for (int t = 0; t + 1 < t_len; ++t) {
        acc[t + 1] += g[t];
        acc[t] -= g[t];
    }
    if (t_len >= 2) {
        acc[t_len - 1] += g[t_len - 1];
        acc[t_len - 2] -= g[t_len - 1];
    }
}
}  // namespace detail

// Stacks [x, x', x''] as three channels, per leading series. x: [..., T, 1]
// -> [..., T, 3]. Differences use the forward scheme with the last value
// replicated; the whole map is linear in x.
inline Tensor derivative_stack(Tape& tape, const Tensor& x) {
    if (x.rank() < 2 || x.dim(x.rank() - 1) != 1)
        throw DimensionError("derivative_stack: want [..., T, 1], got " + shape_str(x.shape()));
    const int t_len = x.dim(x.rank() - 2);
    const std::size_t series = detail::leading_series(x);
    std::vector<int> out_shape = x.shape();
    out_shape.back() = 3;
    Tensor out(out_shape);

    std::vector<double> d1(static_cast<std::size_t>(t_len)), d2(static_cast<std::size_t>(t_len));
    for (std::size_t s = 0; s < series; ++s) {
        const double* xs = x.data() + s * static_cast<std::size_t>(t_len);
        double* os = out.data() + s * static_cast<std::size_t>(t_len) * 3;
        detail::forward_diff(xs, d1.data(), t_len);
        detail::forward_diff(d1.data(), d2.data(), t_len);
        for (int t = 0; t < t_len; ++t) {
            os[static_cast<std::size_t>(t) * 3 + 0] = xs[t];
            os[static_cast<std::size_t>(t) * 3 + 1] = d1[static_cast<std::size_t>(t)];
            os[static_cast<std::size_t>(t) * 3 + 2] = d2[static_cast<std::size_t>(t)];
        }
    }

    if (detail::track(tape, x)) {
        out.set_requires_grad();
        tape.record([x, out, t_len, series] {
            if (!out.has_grad()) return;
            const double* g = out.grad().data();
            auto& gx = x.grad();
            std::vector<double> gch(static_cast<std::size_t>(t_len));
            std::vector<double> tmp(static_cast<std::size_t>(t_len));
            for (std::size_t s = 0; s < series; ++s) {
                const double* gs = g + s * static_cast<std::size_t>(t_len) * 3;
                double* gxs = gx.data() + s * static_cast<std::size_t>(t_len);
                for (int t = 0; t < t_len; ++t) gxs[t] += gs[static_cast<std::size_t>(t) * 3 + 0];
                for (int t = 0; t < t_len; ++t) gch[static_cast<std::size_t>(t)] = gs[static_cast<std::size_t>(t) * 3 + 1];
                detail::forward_diff_adjoint(gch.data(), gxs, t_len);
                // second derivative chains through two difference operators
                for (int t = 0; t < t_len; ++t) gch[static_cast<std::size_t>(t)] = gs[static_cast<std::size_t>(t) * 3 + 2];
                std::fill(tmp.begin(), tmp.end(), 0.0);
                detail::forward_diff_adjoint(gch.data(), tmp.data(), t_len);
                detail::forward_diff_adjoint(tmp.data(), gxs, t_len);
            }
        });
    }
    return out;
}

// Mean over the time axis of a single-channel tensor: [..., T, 1] -> [...].
inline Tensor temporal_mean(Tape& tape, const Tensor& x) {
    if (x.rank() < 3 || x.dim(x.rank() - 1) != 1)
        throw DimensionError("temporal_mean: want [..., T, 1], got " + shape_str(x.shape()));
    const int t_len = x.dim(x.rank() - 2);
    const std::size_t series = detail::leading_series(x);
    std::vector<int> out_shape(x.shape().begin(), x.shape().end() - 2);
    Tensor out(out_shape);
    const double inv = 1.0 / t_len;
    for (std::size_t s = 0; s < series; ++s) {
        const double* xs = x.data() + s * static_cast<std::size_t>(t_len);
        double acc = 0.0;
        for (int t = 0; t < t_len; ++t) acc += xs[t];
        out[s] = acc * inv;
    }
    if (detail::track(tape, x)) {
        out.set_requires_grad();
        tape.record([x, out, t_len, series, inv] {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            auto& gx = x.grad();
            for (std::size_t s = 0; s < series; ++s) {
                const double gv = g[s] * inv;
                double* gxs = gx.data() + s * static_cast<std::size_t>(t_len);
                for (int t = 0; t < t_len; ++t) gxs[t] += gv;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// broadcast bias
// ---------------------------------------------------------------------------

// y[r, c] = x[r, c] + b[r]
inline Tensor add_row_bias(Tape& tape, const Tensor& x, const Tensor& b) {
    if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(0))
        throw DimensionError("add_row_bias: " + shape_str(x.shape()) + " with " + shape_str(b.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    Tensor out(x.shape());
    for (int r = 0; r < rows; ++r) {
        const double bv = b.at(r);
        const double* xr = x.data() + static_cast<std::size_t>(r) * cols;
        double* yr = out.data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) yr[c] = xr[c] + bv;
    }
    if (detail::track(tape, x, b)) {
        out.set_requires_grad();
        tape.record([x, b, out, rows, cols] {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            if (x.requires_grad()) detail::axpy(1.0, g.data(), x.grad().data(), g.size());
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (int r = 0; r < rows; ++r) {
                    const double* gr = g.data() + static_cast<std::size_t>(r) * cols;
                    double acc = 0.0;
                    for (int c = 0; c < cols; ++c) acc += gr[c];
                    gb[static_cast<std::size_t>(r)] += acc;
                }
            }
        });
    }
    return out;
}

// y[..., c] = x[..., c] + b[c]
inline Tensor add_channel_bias(Tape& tape, const Tensor& x, const Tensor& b) {
    if (b.rank() != 1 || x.rank() < 1 || x.dim(x.rank() - 1) != b.dim(0))
        throw DimensionError("add_channel_bias: " + shape_str(x.shape()) + " with " + shape_str(b.shape()));
    const int ch = b.dim(0);
    const std::size_t positions = x.size() / static_cast<std::size_t>(ch);
    Tensor out(x.shape());
    const double* px = x.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t p = 0; p < positions; ++p)
        for (int c = 0; c < ch; ++c) po[p * ch + c] = px[p * ch + c] + pb[c];
    if (detail::track(tape, x, b)) {
        out.set_requires_grad();
        tape.record([x, b, out, ch, positions] {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            if (x.requires_grad()) detail::axpy(1.0, g.data(), x.grad().data(), g.size());
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (std::size_t p = 0; p < positions; ++p)
                    for (int c = 0; c < ch; ++c) gb[static_cast<std::size_t>(c)] += g[p * ch + c];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions and loss
// ---------------------------------------------------------------------------

inline Tensor sum_all(Tape& tape, const Tensor& x) {
    Tensor out = Tensor::scalar(0.0);
    double acc = 0.0;
    const double* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) acc += px[i];
    out[0] = acc;
    if (detail::track(tape, x)) {
        out.set_requires_grad();
        tape.record([x, out] {
            if (!out.has_grad()) return;
            const double gv = out.grad()[0];
            auto& gx = x.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gv;
        });
    }
    return out;
}

inline Tensor mean_all(Tape& tape, const Tensor& x) {
    Tensor s = sum_all(tape, x);
    return scale(tape, s, 1.0 / static_cast<double>(x.size()));
}

// Mean negative log likelihood of the true classes. probs: [B, C] rows of
// class probabilities, labels: one class id per row. Probabilities are
// floored at `floor` inside the log so a confident miss cannot produce inf.
inline Tensor nll_mean(Tape& tape, const Tensor& probs, std::span<const int> labels,
                       double floor = 1e-12) {
    if (probs.rank() != 2)
        throw DimensionError("nll_mean: probs must be [B, C], got " + shape_str(probs.shape()));
    const int batch = probs.dim(0), classes = probs.dim(1);
    if (static_cast<std::size_t>(batch) != labels.size())
        throw ContractError("nll_mean: " + std::to_string(labels.size()) + " labels for batch of " +
                            std::to_string(batch));
    for (int b = 0; b < batch; ++b)
        if (labels[static_cast<std::size_t>(b)] < 0 || labels[static_cast<std::size_t>(b)] >= classes)
            throw ContractError("nll_mean: label " + std::to_string(labels[static_cast<std::size_t>(b)]) +
                                " out of range for " + std::to_string(classes) + " classes");
    Tensor out = Tensor::scalar(0.0);
    double acc = 0.0;
    for (int b = 0; b < batch; ++b)
        acc -= std::log(std::max(probs.at(b, labels[static_cast<std::size_t>(b)]), floor));
    out[0] = acc / batch;
    if (detail::track(tape, probs)) {
        out.set_requires_grad();
        std::vector<int> lab(labels.begin(), labels.end());
        tape.record([probs, out, lab, batch, classes, floor] {
            if (!out.has_grad()) return;
            const double gv = out.grad()[0] / batch;
            auto& gp = probs.grad();
            for (int b = 0; b < batch; ++b) {
                const double p = probs.at(b, lab[static_cast<std::size_t>(b)]);
                if (p > floor)
                    gp[static_cast<std::size_t>(b) * classes + lab[static_cast<std::size_t>(b)]] -= gv / p;
            }
        });
    }
    return out;
}

}  // namespace dastgcn
