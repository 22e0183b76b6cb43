#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "femseg/ad/tape.hpp"
#include "femseg/core/parallel.hpp"

namespace femseg::ad {

enum class PadMode {
    same, // zero padding sized to preserve spatial extents at stride 1; odd kernels only
    zero  // explicit symmetric zero padding amount
};

struct ConvSpec {
    int64_t in_channels = 1;
    int64_t out_channels = 1;
    std::vector<int64_t> kernel; // per spatial axis; rank 2 or 3
    int64_t stride = 1;
    PadMode pad_mode = PadMode::same;
    int64_t pad = 0; // used when pad_mode == zero

    void validate() const {
        FEMSEG_REQUIRE(in_channels >= 1 && out_channels >= 1, "conv: channel counts must be >= 1");
        FEMSEG_REQUIRE(stride >= 1, "conv: stride must be >= 1");
        FEMSEG_REQUIRE(kernel.size() == 2 || kernel.size() == 3,
                       "conv: kernel must have spatial rank 2 or 3");
        for (int64_t k : kernel) {
            FEMSEG_REQUIRE(k >= 1, "conv: kernel extents must be >= 1");
            if (pad_mode == PadMode::same)
                FEMSEG_REQUIRE(k % 2 == 1, "conv: same-padding requires odd kernel extents");
        }
        if (pad_mode == PadMode::zero)
            FEMSEG_REQUIRE(pad >= 0, "conv: explicit padding must be >= 0");
    }

    int64_t pad_for(size_t axis) const {
        return pad_mode == PadMode::same ? (kernel[axis] - 1) / 2 : pad;
    }
};

namespace detail {

inline int64_t ceil_div(int64_t a, int64_t b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }

inline int64_t conv_out_extent(int64_t n, int64_t k, int64_t p, int64_t s) {
    return (n + 2 * p - k) / s + 1;
}

// All convolutions run through one 3D kernel; 2D inputs get a leading
// unit spatial extent.
struct ConvDims {
    int64_t n, cin, cout;
    int64_t d[3];  // input spatial extents
    int64_t k[3];  // kernel extents
    int64_t p[3];  // symmetric zero padding
    int64_t o[3];  // output spatial extents
    int64_t s;     // stride (all axes)
    int64_t isz, osz, ksz;
};

template <typename T>
inline ConvDims conv_dims(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& w,
                          const Tensor<T>& b) {
    spec.validate();
    const int sr = int(spec.kernel.size());
    FEMSEG_REQUIRE(x.rank() == sr + 2, "conv: input rank " + shape_str(x.shape) +
                                           " does not match kernel rank " +
                                           std::to_string(sr));
    FEMSEG_REQUIRE(x.shape[1] == spec.in_channels,
                   "conv: input channels " + shape_str(x.shape) + " do not match spec in_channels " +
                       std::to_string(spec.in_channels));
    Shape expect_w{spec.out_channels, spec.in_channels};
    expect_w.insert(expect_w.end(), spec.kernel.begin(), spec.kernel.end());
    FEMSEG_REQUIRE(w.shape == expect_w, "conv: weight shape " + shape_str(w.shape) +
                                            " does not match expected " + shape_str(expect_w));
    FEMSEG_REQUIRE(b.shape == Shape{spec.out_channels},
                   "conv: bias shape " + shape_str(b.shape) + " does not match out_channels " +
                       std::to_string(spec.out_channels));

    ConvDims dm{};
    dm.n = x.shape[0];
    dm.cin = spec.in_channels;
    dm.cout = spec.out_channels;
    dm.s = spec.stride;
    const int off = 3 - sr; // leading unit axes for 2D
    for (int a = 0; a < 3; ++a) {
        dm.d[a] = 1;
        dm.k[a] = 1;
        dm.p[a] = 0;
        dm.o[a] = 1;
    }
    for (int a = 0; a < sr; ++a) {
        dm.d[off + a] = x.shape[size_t(2 + a)];
        dm.k[off + a] = spec.kernel[size_t(a)];
        dm.p[off + a] = spec.pad_for(size_t(a));
        dm.o[off + a] = conv_out_extent(dm.d[off + a], dm.k[off + a], dm.p[off + a], dm.s);
        FEMSEG_REQUIRE(dm.o[off + a] >= 1, "conv: input " + shape_str(x.shape) +
                                               " too small for kernel/stride");
    }
    // unit axes of a 2D conv still stride 1
    dm.isz = dm.d[0] * dm.d[1] * dm.d[2];
    dm.osz = dm.o[0] * dm.o[1] * dm.o[2];
    dm.ksz = dm.k[0] * dm.k[1] * dm.k[2];
    return dm;
}

// Valid output range along one axis for a fixed kernel offset:
// in = out*s - p + k must land in [0, extent).
inline void out_range(int64_t extent, int64_t out_extent, int64_t p, int64_t k, int64_t s,
                      int64_t& lo, int64_t& hi) {
    lo = std::max<int64_t>(0, ceil_div(p - k, s));
    hi = std::min<int64_t>(out_extent - 1, (extent - 1 + p - k) / s);
}

template <typename T>
void conv_forward_kernel(const ConvDims& dm, const T* x, const T* w, const T* b, T* y) {
    parallel_for(dm.n * dm.cout, [&](int64_t t) {
        const int64_t n = t / dm.cout, oc = t % dm.cout;
        T* out = y + (n * dm.cout + oc) * dm.osz;
        std::fill(out, out + dm.osz, b[oc]);
        for (int64_t ic = 0; ic < dm.cin; ++ic) {
            const T* in = x + (n * dm.cin + ic) * dm.isz;
            const T* wk = w + (oc * dm.cin + ic) * dm.ksz;
            for (int64_t kd = 0; kd < dm.k[0]; ++kd)
                for (int64_t kh = 0; kh < dm.k[1]; ++kh)
                    for (int64_t kw = 0; kw < dm.k[2]; ++kw) {
                        const T wv = wk[(kd * dm.k[1] + kh) * dm.k[2] + kw];
                        int64_t od0, od1, oh0, oh1, ow0, ow1;
                        out_range(dm.d[0], dm.o[0], dm.p[0], kd, dm.s, od0, od1);
                        out_range(dm.d[1], dm.o[1], dm.p[1], kh, dm.s, oh0, oh1);
                        out_range(dm.d[2], dm.o[2], dm.p[2], kw, dm.s, ow0, ow1);
                        for (int64_t od = od0; od <= od1; ++od) {
                            const int64_t id = od * dm.s - dm.p[0] + kd;
                            for (int64_t oh = oh0; oh <= oh1; ++oh) {
                                const int64_t ih = oh * dm.s - dm.p[1] + kh;
                                T* orow = out + (od * dm.o[1] + oh) * dm.o[2];
                                const T* irow = in + (id * dm.d[1] + ih) * dm.d[2] - dm.p[2] + kw;
                                if (dm.s == 1) {
                                    for (int64_t ow = ow0; ow <= ow1; ++ow)
                                        orow[ow] += wv * irow[ow];
                                } else {
                                    for (int64_t ow = ow0; ow <= ow1; ++ow)
                                        orow[ow] += wv * irow[ow * dm.s];
                                }
                            }
                        }
                    }
        }
    });
}

template <typename T>
void conv_backward_data_kernel(const ConvDims& dm, const T* gy, const T* w, T* gx) {
    parallel_for(dm.n * dm.cin, [&](int64_t t) {
        const int64_t n = t / dm.cin, ic = t % dm.cin;
        T* dx = gx + (n * dm.cin + ic) * dm.isz;
        for (int64_t oc = 0; oc < dm.cout; ++oc) {
            const T* g = gy + (n * dm.cout + oc) * dm.osz;
            const T* wk = w + (oc * dm.cin + ic) * dm.ksz;
            for (int64_t kd = 0; kd < dm.k[0]; ++kd)
                for (int64_t kh = 0; kh < dm.k[1]; ++kh)
                    for (int64_t kw = 0; kw < dm.k[2]; ++kw) {
                        const T wv = wk[(kd * dm.k[1] + kh) * dm.k[2] + kw];
                        int64_t od0, od1, oh0, oh1, ow0, ow1;
                        out_range(dm.d[0], dm.o[0], dm.p[0], kd, dm.s, od0, od1);
                        out_range(dm.d[1], dm.o[1], dm.p[1], kh, dm.s, oh0, oh1);
                        out_range(dm.d[2], dm.o[2], dm.p[2], kw, dm.s, ow0, ow1);
                        for (int64_t od = od0; od <= od1; ++od) {
                            const int64_t id = od * dm.s - dm.p[0] + kd;
                            for (int64_t oh = oh0; oh <= oh1; ++oh) {
                                const int64_t ih = oh * dm.s - dm.p[1] + kh;
                                const T* grow = g + (od * dm.o[1] + oh) * dm.o[2];
                                T* xrow = dx + (id * dm.d[1] + ih) * dm.d[2] - dm.p[2] + kw;
                                if (dm.s == 1) {
                                    for (int64_t ow = ow0; ow <= ow1; ++ow)
                                        xrow[ow] += wv * grow[ow];
                                } else {
                                    for (int64_t ow = ow0; ow <= ow1; ++ow)
                                        xrow[ow * dm.s] += wv * grow[ow];
                                }
                            }
                        }
                    }
        }
    });
}

template <typename T>
void conv_backward_filter_kernel(const ConvDims& dm, const T* gy, const T* x, T* gw, T* gb) {
    parallel_for(dm.cout, [&](int64_t oc) {
        double bacc = 0;
        for (int64_t n = 0; n < dm.n; ++n) {
            const T* g = gy + (n * dm.cout + oc) * dm.osz;
            for (int64_t i = 0; i < dm.osz; ++i) bacc += double(g[i]);
        }
        gb[oc] += T(bacc);
        for (int64_t ic = 0; ic < dm.cin; ++ic) {
            T* wk = gw + (oc * dm.cin + ic) * dm.ksz;
            for (int64_t kd = 0; kd < dm.k[0]; ++kd)
                for (int64_t kh = 0; kh < dm.k[1]; ++kh)
                    for (int64_t kw = 0; kw < dm.k[2]; ++kw) {
                        int64_t od0, od1, oh0, oh1, ow0, ow1;
                        out_range(dm.d[0], dm.o[0], dm.p[0], kd, dm.s, od0, od1);
                        out_range(dm.d[1], dm.o[1], dm.p[1], kh, dm.s, oh0, oh1);
                        out_range(dm.d[2], dm.o[2], dm.p[2], kw, dm.s, ow0, ow1);
                        double acc = 0;
                        for (int64_t n = 0; n < dm.n; ++n) {
                            const T* g = gy + (n * dm.cout + oc) * dm.osz;
                            const T* in = x + (n * dm.cin + ic) * dm.isz;
                            for (int64_t od = od0; od <= od1; ++od) {
                                const int64_t id = od * dm.s - dm.p[0] + kd;
                                for (int64_t oh = oh0; oh <= oh1; ++oh) {
                                    const int64_t ih = oh * dm.s - dm.p[1] + kh;
                                    const T* grow = g + (od * dm.o[1] + oh) * dm.o[2];
                                    const T* irow =
                                        in + (id * dm.d[1] + ih) * dm.d[2] - dm.p[2] + kw;
                                    if (dm.s == 1) {
                                        for (int64_t ow = ow0; ow <= ow1; ++ow)
                                            acc += double(grow[ow]) * double(irow[ow]);
                                    } else {
                                        for (int64_t ow = ow0; ow <= ow1; ++ow)
                                            acc += double(grow[ow]) * double(irow[ow * dm.s]);
                                    }
                                }
                            }
                        }
                        wk[(kd * dm.k[1] + kh) * dm.k[2] + kw] += T(acc);
                    }
        }
    });
}

} // namespace detail

// Convolution with zero padding; supports 2D and 3D spatial ranks.
// Output spatial extents follow floor((n + 2p - k)/s) + 1.
template <typename T>
NodeId conv(Tape<T>& tape, NodeId x, const ConvSpec& spec, NodeId w, NodeId b) {
    const auto dm = detail::conv_dims(tape.value(x), spec, tape.value(w), tape.value(b));
    Shape oshape{dm.n, dm.cout};
    const int off = 3 - int(spec.kernel.size());
    for (int a = off; a < 3; ++a) oshape.push_back(dm.o[a]);
    Tensor<T> out(oshape);
    detail::conv_forward_kernel(dm, tape.value(x).ptr(), tape.value(w).ptr(),
                                tape.value(b).ptr(), out.ptr());
    bool rg = tape.requires_grad(x) || tape.requires_grad(w) || tape.requires_grad(b);
    return tape.emplace(std::move(out), rg, [x, w, b, dm](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        if (t.requires_grad(x))
            detail::conv_backward_data_kernel(dm, g.ptr(), t.value(w).ptr(), t.grad(x).ptr());
        if (t.requires_grad(w) || t.requires_grad(b)) {
            // filter and bias gradients share a pass; both nodes always exist together
            detail::conv_backward_filter_kernel(dm, g.ptr(), t.value(x).ptr(), t.grad(w).ptr(),
                                                t.grad(b).ptr());
        }
    });
}

// Max pooling with window == stride (non-overlapping). Backward routes each
// output's gradient to the first maximal input in scan order.
template <typename T>
NodeId max_pool(Tape<T>& tape, NodeId x, int64_t window, int64_t stride) {
    FEMSEG_REQUIRE(window == stride && window >= 1,
                   "max_pool: only window == stride supported, got window " +
                       std::to_string(window) + " stride " + std::to_string(stride));
    const auto& v = tape.value(x);
    FEMSEG_REQUIRE(v.rank() >= 3, "max_pool: expected [N,C,spatial...], got " + shape_str(v.shape));
    const int sr = v.rank() - 2;
    const int64_t n = v.shape[0], c = v.shape[1];
    int64_t d[3] = {1, 1, 1}, o[3] = {1, 1, 1}, win[3] = {1, 1, 1};
    const int off = 3 - sr;
    for (int a = 0; a < sr; ++a) {
        d[off + a] = v.shape[size_t(2 + a)];
        win[off + a] = window;
        FEMSEG_REQUIRE(d[off + a] % window == 0,
                       "max_pool: extent " + std::to_string(d[off + a]) +
                           " not divisible by stride " + std::to_string(window));
        o[off + a] = d[off + a] / window;
    }
    const int64_t isz = d[0] * d[1] * d[2], osz = o[0] * o[1] * o[2];
    Shape oshape{n, c};
    for (int a = off; a < 3; ++a) oshape.push_back(o[a]);
    Tensor<T> out(oshape);
    auto argmax = std::make_shared<std::vector<int64_t>>(size_t(n * c * osz));
    parallel_for(n * c, [&](int64_t t) {
        const T* in = v.ptr() + t * isz;
        T* op = out.ptr() + t * osz;
        int64_t* am = argmax->data() + t * osz;
        int64_t oi = 0;
        for (int64_t od = 0; od < o[0]; ++od)
            for (int64_t oh = 0; oh < o[1]; ++oh)
                for (int64_t ow = 0; ow < o[2]; ++ow, ++oi) {
                    T best = -std::numeric_limits<T>::infinity();
                    int64_t besti = -1;
                    for (int64_t jd = 0; jd < win[0]; ++jd)
                        for (int64_t jh = 0; jh < win[1]; ++jh)
                            for (int64_t jw = 0; jw < win[2]; ++jw) {
                                const int64_t idx =
                                    ((od * win[0] + jd) * d[1] + oh * win[1] + jh) * d[2] +
                                    ow * win[2] + jw;
                                if (in[idx] > best) {
                                    best = in[idx];
                                    besti = idx;
                                }
                            }
                    op[oi] = best;
                    am[oi] = besti;
                }
    });
    return tape.emplace(std::move(out), tape.requires_grad(x),
                        [x, argmax, isz, osz, n, c](Tape<T>& t, int self) {
                            const auto& g = t.grad(NodeId{self});
                            if (!t.requires_grad(x)) return;
                            auto& gx = t.grad(x);
                            parallel_for(n * c, [&](int64_t i) {
                                const T* gp = g.ptr() + i * osz;
                                const int64_t* am = argmax->data() + i * osz;
                                T* dst = gx.ptr() + i * isz;
                                for (int64_t j = 0; j < osz; ++j) dst[am[j]] += gp[j];
                            });
                        });
}

// Nearest-neighbor upsampling by an integer factor on every spatial axis.
template <typename T>
NodeId upsample_nearest(Tape<T>& tape, NodeId x, int64_t factor) {
    FEMSEG_REQUIRE(factor >= 2, "upsample_nearest: factor must be >= 2");
    const auto& v = tape.value(x);
    FEMSEG_REQUIRE(v.rank() >= 3,
                   "upsample_nearest: expected [N,C,spatial...], got " + shape_str(v.shape));
    const int sr = v.rank() - 2;
    const int64_t n = v.shape[0], c = v.shape[1];
    int64_t d[3] = {1, 1, 1}, o[3] = {1, 1, 1}, f[3] = {1, 1, 1};
    const int off = 3 - sr;
    for (int a = 0; a < sr; ++a) {
        d[off + a] = v.shape[size_t(2 + a)];
        f[off + a] = factor;
        o[off + a] = d[off + a] * factor;
    }
    const int64_t isz = d[0] * d[1] * d[2], osz = o[0] * o[1] * o[2];
    Shape oshape{n, c};
    for (int a = off; a < 3; ++a) oshape.push_back(o[a]);
    Tensor<T> out(oshape);
    parallel_for(n * c, [&](int64_t t) {
        const T* in = v.ptr() + t * isz;
        T* op = out.ptr() + t * osz;
        for (int64_t od = 0; od < o[0]; ++od)
            for (int64_t oh = 0; oh < o[1]; ++oh) {
                const T* irow = in + ((od / f[0]) * d[1] + oh / f[1]) * d[2];
                T* orow = op + (od * o[1] + oh) * o[2];
                for (int64_t ow = 0; ow < o[2]; ++ow) orow[ow] = irow[ow / f[2]];
            }
    });
    auto dims = std::make_shared<std::array<int64_t, 9>>(
        std::array<int64_t, 9>{d[0], d[1], d[2], o[0], o[1], o[2], f[0], f[1], f[2]});
    return tape.emplace(std::move(out), tape.requires_grad(x),
                        [x, dims, isz, osz, n, c](Tape<T>& t, int self) {
                            const auto& g = t.grad(NodeId{self});
                            if (!t.requires_grad(x)) return;
                            auto& gx = t.grad(x);
                            const auto& dd = *dims;
                            parallel_for(n * c, [&](int64_t i) {
                                const T* gp = g.ptr() + i * osz;
                                T* dst = gx.ptr() + i * isz;
                                for (int64_t od = 0; od < dd[3]; ++od)
                                    for (int64_t oh = 0; oh < dd[4]; ++oh) {
                                        const T* grow = gp + (od * dd[4] + oh) * dd[5];
                                        T* drow = dst + ((od / dd[6]) * dd[1] + oh / dd[7]) * dd[2];
                                        for (int64_t ow = 0; ow < dd[5]; ++ow)
                                            drow[ow / dd[8]] += grow[ow];
                                    }
                            });
                        });
}

enum class NormMode { train, eval };

// Running statistics live outside the tape so they persist across steps.
template <typename T>
struct BnState {
    Tensor<T>* running_mean = nullptr;
    Tensor<T>* running_var = nullptr;
    Tensor<T>* steps = nullptr; // {1}; counts completed train-mode batches
};

// Per-channel normalization over batch+spatial. Train mode uses batch
// statistics and updates the running ones; eval mode uses the running stats.
template <typename T>
NodeId batch_norm(Tape<T>& tape, NodeId x, NodeId gamma, NodeId beta, BnState<T> state,
                  NormMode mode, T momentum = T(0.9), T eps = T(1e-5)) {
    const auto& v = tape.value(x);
    FEMSEG_REQUIRE(v.rank() >= 3, "batch_norm: expected [N,C,spatial...], got " +
                                      shape_str(v.shape));
    const int64_t n = v.shape[0], c = v.shape[1];
    int64_t s = 1;
    for (int i = 2; i < v.rank(); ++i) s *= v.shape[size_t(i)];
    const auto& gv = tape.value(gamma);
    const auto& bv = tape.value(beta);
    FEMSEG_REQUIRE(gv.shape == Shape{c} && bv.shape == Shape{c},
                   "batch_norm: scale/shift must be [C] for input " + shape_str(v.shape));
    FEMSEG_REQUIRE(state.running_mean && state.running_var && state.steps,
                   "batch_norm: missing running-statistics state");

    auto mean = std::make_shared<std::vector<T>>(size_t(c));
    auto invstd = std::make_shared<std::vector<T>>(size_t(c));
    const int64_t m = n * s;

    if (mode == NormMode::train) {
        parallel_for(c, [&](int64_t ch) {
            double acc = 0;
            for (int64_t i = 0; i < n; ++i) {
                const T* p = v.ptr() + (i * c + ch) * s;
                for (int64_t j = 0; j < s; ++j) acc += double(p[j]);
            }
            const double mu = acc / double(m);
            double vacc = 0;
            for (int64_t i = 0; i < n; ++i) {
                const T* p = v.ptr() + (i * c + ch) * s;
                for (int64_t j = 0; j < s; ++j) {
                    const double dd = double(p[j]) - mu;
                    vacc += dd * dd;
                }
            }
            const double var = vacc / double(m);
            (*mean)[size_t(ch)] = T(mu);
            (*invstd)[size_t(ch)] = T(1.0 / std::sqrt(var + double(eps)));
            auto& rm = *state.running_mean;
            auto& rv = *state.running_var;
            rm[ch] = momentum * rm[ch] + (T(1) - momentum) * T(mu);
            rv[ch] = momentum * rv[ch] + (T(1) - momentum) * T(var);
        });
        (*state.steps)[0] += T(1);
    } else {
        FEMSEG_REQUIRE((*state.steps)[0] > T(0),
                       "batch_norm: eval mode before any training step");
        for (int64_t ch = 0; ch < c; ++ch) {
            (*mean)[size_t(ch)] = (*state.running_mean)[ch];
            (*invstd)[size_t(ch)] =
                T(1.0 / std::sqrt(double((*state.running_var)[ch]) + double(eps)));
        }
    }

    Tensor<T> out(v.shape);
    parallel_for(n * c, [&](int64_t t) {
        const int64_t ch = t % c;
        const T* p = v.ptr() + t * s;
        T* o = out.ptr() + t * s;
        const T mu = (*mean)[size_t(ch)], is = (*invstd)[size_t(ch)];
        const T ga = gv[ch], be = bv[ch];
        for (int64_t j = 0; j < s; ++j) o[j] = ga * (p[j] - mu) * is + be;
    });

    bool rg = tape.requires_grad(x) || tape.requires_grad(gamma) || tape.requires_grad(beta);
    const bool train = mode == NormMode::train;
    return tape.emplace(
        std::move(out), rg, [x, gamma, beta, mean, invstd, n, c, s, m, train](Tape<T>& t, int self) {
            const auto& g = t.grad(NodeId{self});
            const auto& v2 = t.value(x);
            const auto& ga = t.value(gamma);
            // per-channel sums: sum(g) and sum(g * xhat)
            std::vector<double> sum_g(size_t(c), 0.0), sum_gx(size_t(c), 0.0);
            parallel_for(c, [&](int64_t ch) {
                const T mu = (*mean)[size_t(ch)], is = (*invstd)[size_t(ch)];
                double sg = 0, sgx = 0;
                for (int64_t i = 0; i < n; ++i) {
                    const T* gp = g.ptr() + (i * c + ch) * s;
                    const T* xp = v2.ptr() + (i * c + ch) * s;
                    for (int64_t j = 0; j < s; ++j) {
                        sg += double(gp[j]);
                        sgx += double(gp[j]) * double((xp[j] - mu) * is);
                    }
                }
                sum_g[size_t(ch)] = sg;
                sum_gx[size_t(ch)] = sgx;
            });
            if (t.requires_grad(gamma)) {
                auto& gg = t.grad(gamma);
                for (int64_t ch = 0; ch < c; ++ch) gg[ch] += T(sum_gx[size_t(ch)]);
            }
            if (t.requires_grad(beta)) {
                auto& gb = t.grad(beta);
                for (int64_t ch = 0; ch < c; ++ch) gb[ch] += T(sum_g[size_t(ch)]);
            }
            if (t.requires_grad(x)) {
                auto& gx = t.grad(x);
                parallel_for(n * c, [&](int64_t tt) {
                    const int64_t ch = tt % c;
                    const T mu = (*mean)[size_t(ch)], is = (*invstd)[size_t(ch)];
                    const T gam = ga[ch];
                    const T* gp = g.ptr() + tt * s;
                    const T* xp = v2.ptr() + tt * s;
                    T* dst = gx.ptr() + tt * s;
                    if (train) {
                        const T mg = T(sum_g[size_t(ch)] / double(m));
                        const T mgx = T(sum_gx[size_t(ch)] / double(m));
                        for (int64_t j = 0; j < s; ++j) {
                            const T xh = (xp[j] - mu) * is;
                            dst[j] += gam * is * (gp[j] - mg - xh * mgx);
                        }
                    } else {
                        for (int64_t j = 0; j < s; ++j) dst[j] += gam * is * gp[j];
                    }
                });
            }
        });
}

} // namespace femseg::ad
