#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "femseg/ad/tape.hpp"
#include "femseg/core/parallel.hpp"

namespace femseg::ad {

namespace detail {

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    FEMSEG_REQUIRE(a.shape == b.shape, std::string(op) + ": shape mismatch " +
                                           shape_str(a.shape) + " vs " + shape_str(b.shape));
}

// [N, C, spatial...] decomposition used by channel-structured ops.
template <typename T>
inline void split_ncs(const Tensor<T>& t, int64_t& n, int64_t& c, int64_t& s, const char* op) {
    FEMSEG_REQUIRE(t.rank() >= 3, std::string(op) + ": expected [N,C,spatial...], got " +
                                      shape_str(t.shape));
    n = t.shape[0];
    c = t.shape[1];
    s = 1;
    for (int i = 2; i < t.rank(); ++i) s *= t.shape[size_t(i)];
}

} // namespace detail

// ---- elementwise binary ----------------------------------------------------

template <typename T>
NodeId add(Tape<T>& tape, NodeId a, NodeId b) {
    const auto& va = tape.value(a);
    const auto& vb = tape.value(b);
    detail::require_same_shape(va, vb, "add");
    Tensor<T> out(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] + vb[i];
    bool rg = tape.requires_grad(a) || tape.requires_grad(b);
    return tape.emplace(std::move(out), rg, [a, b](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        if (t.requires_grad(a)) {
            auto& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad(b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
        }
    });
}

template <typename T>
NodeId sub(Tape<T>& tape, NodeId a, NodeId b) {
    const auto& va = tape.value(a);
    const auto& vb = tape.value(b);
    detail::require_same_shape(va, vb, "sub");
    Tensor<T> out(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] - vb[i];
    bool rg = tape.requires_grad(a) || tape.requires_grad(b);
    return tape.emplace(std::move(out), rg, [a, b](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        if (t.requires_grad(a)) {
            auto& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad(b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        }
    });
}

template <typename T>
NodeId mul(Tape<T>& tape, NodeId a, NodeId b) {
    const auto& va = tape.value(a);
    const auto& vb = tape.value(b);
    detail::require_same_shape(va, vb, "mul");
    Tensor<T> out(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] * vb[i];
    bool rg = tape.requires_grad(a) || tape.requires_grad(b);
    return tape.emplace(std::move(out), rg, [a, b](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        if (t.requires_grad(a)) {
            auto& ga = t.grad(a);
            const auto& vb2 = t.value(b);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb2[i];
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad(b);
            const auto& va2 = t.value(a);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va2[i];
        }
    });
}

template <typename T>
NodeId div(Tape<T>& tape, NodeId a, NodeId b) {
    const auto& va = tape.value(a);
    const auto& vb = tape.value(b);
    detail::require_same_shape(va, vb, "div");
    Tensor<T> out(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] / vb[i];
    bool rg = tape.requires_grad(a) || tape.requires_grad(b);
    return tape.emplace(std::move(out), rg, [a, b](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        const auto& va2 = t.value(a);
        const auto& vb2 = t.value(b);
        if (t.requires_grad(a)) {
            auto& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / vb2[i];
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad(b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i] * va2[i] / (vb2[i] * vb2[i]);
        }
    });
}

// ---- elementwise unary -----------------------------------------------------

template <typename T>
NodeId scale(Tape<T>& tape, NodeId x, T c) {
    const auto& v = tape.value(x);
    Tensor<T> out(v.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = v[i] * c;
    return tape.emplace(std::move(out), tape.requires_grad(x), [x, c](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        if (!t.requires_grad(x)) return;
        auto& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * c;
    });
}

template <typename T>
NodeId add_scalar(Tape<T>& tape, NodeId x, T c) {
    const auto& v = tape.value(x);
    Tensor<T> out(v.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = v[i] + c;
    return tape.emplace(std::move(out), tape.requires_grad(x), [x](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        if (!t.requires_grad(x)) return;
        auto& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
}

template <typename T>
NodeId one_minus(Tape<T>& tape, NodeId x) {
    const auto& v = tape.value(x);
    Tensor<T> out(v.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) - v[i];
    return tape.emplace(std::move(out), tape.requires_grad(x), [x](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        if (!t.requires_grad(x)) return;
        auto& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] -= g[i];
    });
}

template <typename T>
NodeId relu(Tape<T>& tape, NodeId x) {
    const auto& v = tape.value(x);
    Tensor<T> out(v.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = v[i] > T(0) ? v[i] : T(0);
    return tape.emplace(std::move(out), tape.requires_grad(x), [x](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        const auto& y = t.value(NodeId{self});
        if (!t.requires_grad(x)) return;
        auto& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i)
            if (y[i] > T(0)) gx[i] += g[i];
    });
}

template <typename T>
NodeId leaky_relu(Tape<T>& tape, NodeId x, T slope) {
    const auto& v = tape.value(x);
    Tensor<T> out(v.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = v[i] > T(0) ? v[i] : slope * v[i];
    return tape.emplace(std::move(out), tape.requires_grad(x), [x, slope](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        const auto& v2 = t.value(x);
        if (!t.requires_grad(x)) return;
        auto& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * (v2[i] > T(0) ? T(1) : slope);
    });
}

template <typename T>
NodeId sigmoid(Tape<T>& tape, NodeId x) {
    const auto& v = tape.value(x);
    Tensor<T> out(v.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-v[i]));
    return tape.emplace(std::move(out), tape.requires_grad(x), [x](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        const auto& y = t.value(NodeId{self});
        if (!t.requires_grad(x)) return;
        auto& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
    });
}

template <typename T>
NodeId log_op(Tape<T>& tape, NodeId x) {
    const auto& v = tape.value(x);
    Tensor<T> out(v.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(v[i]);
    return tape.emplace(std::move(out), tape.requires_grad(x), [x](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        const auto& v2 = t.value(x);
        if (!t.requires_grad(x)) return;
        auto& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] / v2[i];
    });
}

// max(x, floor). Subgradient at the floor is 0, so a clamped value forms a
// flat plateau.
template <typename T>
NodeId clamp_min(Tape<T>& tape, NodeId x, T floor) {
    const auto& v = tape.value(x);
    Tensor<T> out(v.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = v[i] > floor ? v[i] : floor;
    return tape.emplace(std::move(out), tape.requires_grad(x), [x, floor](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        const auto& v2 = t.value(x);
        if (!t.requires_grad(x)) return;
        auto& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i)
            if (v2[i] > floor) gx[i] += g[i];
    });
}

template <typename T>
NodeId reciprocal(Tape<T>& tape, NodeId x) {
    const auto& v = tape.value(x);
    Tensor<T> out(v.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / v[i];
    return tape.emplace(std::move(out), tape.requires_grad(x), [x](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        const auto& y = t.value(NodeId{self});
        if (!t.requires_grad(x)) return;
        auto& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] -= g[i] * y[i] * y[i];
    });
}

template <typename T>
NodeId square(Tape<T>& tape, NodeId x) {
    const auto& v = tape.value(x);
    Tensor<T> out(v.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = v[i] * v[i];
    return tape.emplace(std::move(out), tape.requires_grad(x), [x](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        const auto& v2 = t.value(x);
        if (!t.requires_grad(x)) return;
        auto& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += T(2) * g[i] * v2[i];
    });
}

// Elementwise product with a constant tensor (not differentiated).
template <typename T>
NodeId mul_const(Tape<T>& tape, NodeId x, Tensor<T> c) {
    const auto& v = tape.value(x);
    detail::require_same_shape(v, c, "mul_const");
    Tensor<T> out(v.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = v[i] * c[i];
    auto cp = std::make_shared<Tensor<T>>(std::move(c));
    return tape.emplace(std::move(out), tape.requires_grad(x), [x, cp](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        if (!t.requires_grad(x)) return;
        auto& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * (*cp)[i];
    });
}

// ---- reductions ------------------------------------------------------------

template <typename T>
NodeId sum_all(Tape<T>& tape, NodeId x) {
    const auto& v = tape.value(x);
    double acc = 0;
    for (int64_t i = 0; i < v.numel(); ++i) acc += double(v[i]);
    return tape.emplace(Tensor<T>::scalar(T(acc)), tape.requires_grad(x),
                        [x](Tape<T>& t, int self) {
                            const T g = t.grad(NodeId{self})[0];
                            if (!t.requires_grad(x)) return;
                            auto& gx = t.grad(x);
                            for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
                        });
}

template <typename T>
NodeId mean_all(Tape<T>& tape, NodeId x) {
    const auto& v = tape.value(x);
    const int64_t n = v.numel();
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += double(v[i]);
    return tape.emplace(Tensor<T>::scalar(T(acc / double(n))), tape.requires_grad(x),
                        [x, n](Tape<T>& t, int self) {
                            const T g = t.grad(NodeId{self})[0] / T(n);
                            if (!t.requires_grad(x)) return;
                            auto& gx = t.grad(x);
                            for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
                        });
}

// Sums the trailing k dims; result keeps the leading dims (scalar {1} if none).
template <typename T>
NodeId sum_trailing(Tape<T>& tape, NodeId x, int k) {
    const auto& v = tape.value(x);
    FEMSEG_REQUIRE(k >= 1 && k <= v.rank(), "sum_trailing: bad k for " + shape_str(v.shape));
    Shape lead(v.shape.begin(), v.shape.end() - k);
    int64_t inner = 1;
    for (int i = v.rank() - k; i < v.rank(); ++i) inner *= v.shape[size_t(i)];
    if (lead.empty()) lead = {1};
    Tensor<T> out(lead);
    const int64_t outer = out.numel();
    for (int64_t o = 0; o < outer; ++o) {
        double acc = 0;
        const T* p = v.ptr() + o * inner;
        for (int64_t i = 0; i < inner; ++i) acc += double(p[i]);
        out[o] = T(acc);
    }
    return tape.emplace(std::move(out), tape.requires_grad(x),
                        [x, inner](Tape<T>& t, int self) {
                            const auto& g = t.grad(NodeId{self});
                            if (!t.requires_grad(x)) return;
                            auto& gx = t.grad(x);
                            for (int64_t o = 0; o < g.numel(); ++o) {
                                T* p = gx.ptr() + o * inner;
                                const T gv = g[o];
                                for (int64_t i = 0; i < inner; ++i) p[i] += gv;
                            }
                        });
}

// ---- channel-structured ops ------------------------------------------------

template <typename T>
NodeId select_channel(Tape<T>& tape, NodeId x, int64_t channel) {
    const auto& v = tape.value(x);
    int64_t n, c, s;
    detail::split_ncs(v, n, c, s, "select_channel");
    FEMSEG_REQUIRE(channel >= 0 && channel < c,
                   "select_channel: channel " + std::to_string(channel) + " out of range for " +
                       shape_str(v.shape));
    Shape oshape = v.shape;
    oshape[1] = 1;
    Tensor<T> out(oshape);
    for (int64_t i = 0; i < n; ++i)
        std::copy_n(v.ptr() + (i * c + channel) * s, s, out.ptr() + i * s);
    return tape.emplace(std::move(out), tape.requires_grad(x),
                        [x, channel, n, c, s](Tape<T>& t, int self) {
                            const auto& g = t.grad(NodeId{self});
                            if (!t.requires_grad(x)) return;
                            auto& gx = t.grad(x);
                            for (int64_t i = 0; i < n; ++i) {
                                T* dst = gx.ptr() + (i * c + channel) * s;
                                const T* src = g.ptr() + i * s;
                                for (int64_t j = 0; j < s; ++j) dst[j] += src[j];
                            }
                        });
}

template <typename T>
NodeId concat_channels(Tape<T>& tape, const std::vector<NodeId>& xs) {
    FEMSEG_REQUIRE(!xs.empty(), "concat_channels: no inputs");
    int64_t n0, c0, s0;
    detail::split_ncs(tape.value(xs[0]), n0, c0, s0, "concat_channels");
    int64_t ctotal = 0;
    bool rg = false;
    for (NodeId id : xs) {
        const auto& v = tape.value(id);
        int64_t n, c, s;
        detail::split_ncs(v, n, c, s, "concat_channels");
        FEMSEG_REQUIRE(n == n0 && s == s0 && v.rank() == tape.value(xs[0]).rank(),
                       "concat_channels: non-channel extents disagree: " + shape_str(v.shape) +
                           " vs " + shape_str(tape.value(xs[0]).shape));
        ctotal += c;
        rg = rg || tape.requires_grad(id);
    }
    Shape oshape = tape.value(xs[0]).shape;
    oshape[1] = ctotal;
    Tensor<T> out(oshape);
    for (int64_t i = 0; i < n0; ++i) {
        int64_t coff = 0;
        for (NodeId id : xs) {
            const auto& v = tape.value(id);
            const int64_t c = v.shape[1];
            std::copy_n(v.ptr() + i * c * s0, c * s0, out.ptr() + (i * ctotal + coff) * s0);
            coff += c;
        }
    }
    auto inputs = std::make_shared<std::vector<NodeId>>(xs);
    return tape.emplace(std::move(out), rg,
                        [inputs, n0, s0, ctotal](Tape<T>& t, int self) {
                            const auto& g = t.grad(NodeId{self});
                            int64_t coff = 0;
                            for (NodeId id : *inputs) {
                                const int64_t c = t.value(id).shape[1];
                                if (t.requires_grad(id)) {
                                    auto& gx = t.grad(id);
                                    for (int64_t i = 0; i < n0; ++i) {
                                        const T* src = g.ptr() + (i * ctotal + coff) * s0;
                                        T* dst = gx.ptr() + i * c * s0;
                                        for (int64_t j = 0; j < c * s0; ++j) dst[j] += src[j];
                                    }
                                }
                                coff += c;
                            }
                        });
}

// Spatial mean per (batch, channel): [N,C,spatial...] -> [N,C].
template <typename T>
NodeId global_avg_pool(Tape<T>& tape, NodeId x) {
    const auto& v = tape.value(x);
    int64_t n, c, s;
    detail::split_ncs(v, n, c, s, "global_avg_pool");
    Tensor<T> out({n, c});
    for (int64_t i = 0; i < n * c; ++i) {
        double acc = 0;
        const T* p = v.ptr() + i * s;
        for (int64_t j = 0; j < s; ++j) acc += double(p[j]);
        out[i] = T(acc / double(s));
    }
    return tape.emplace(std::move(out), tape.requires_grad(x), [x, s](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        if (!t.requires_grad(x)) return;
        auto& gx = t.grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) {
            const T gv = g[i] / T(s);
            T* p = gx.ptr() + i * s;
            for (int64_t j = 0; j < s; ++j) p[j] += gv;
        }
    });
}

// Softmax across channels, independently at every (batch, voxel).
template <typename T>
NodeId channel_softmax(Tape<T>& tape, NodeId x) {
    const auto& v = tape.value(x);
    int64_t n, c, s;
    detail::split_ncs(v, n, c, s, "channel_softmax");
    Tensor<T> out(v.shape);
    parallel_for(n, [&](int64_t i) {
        const T* in = v.ptr() + i * c * s;
        T* o = out.ptr() + i * c * s;
        for (int64_t j = 0; j < s; ++j) {
            T m = in[j];
            for (int64_t k = 1; k < c; ++k) m = std::max(m, in[k * s + j]);
            T z = T(0);
            for (int64_t k = 0; k < c; ++k) {
                const T e = std::exp(in[k * s + j] - m);
                o[k * s + j] = e;
                z += e;
            }
            for (int64_t k = 0; k < c; ++k) o[k * s + j] /= z;
        }
    });
    return tape.emplace(std::move(out), tape.requires_grad(x), [x, n, c, s](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        const auto& y = t.value(NodeId{self});
        if (!t.requires_grad(x)) return;
        auto& gx = t.grad(x);
        parallel_for(n, [&](int64_t i) {
            const T* yp = y.ptr() + i * c * s;
            const T* gp = g.ptr() + i * c * s;
            T* xp = gx.ptr() + i * c * s;
            for (int64_t j = 0; j < s; ++j) {
                T dot = T(0);
                for (int64_t k = 0; k < c; ++k) dot += gp[k * s + j] * yp[k * s + j];
                for (int64_t k = 0; k < c; ++k)
                    xp[k * s + j] += yp[k * s + j] * (gp[k * s + j] - dot);
            }
        });
    });
}

// Temperature softmax over the spatial extent of each (batch, channel) slice.
template <typename T>
NodeId spatial_softmax(Tape<T>& tape, NodeId x, T tau) {
    const auto& v = tape.value(x);
    FEMSEG_REQUIRE(tau > T(0), "spatial_softmax: temperature must be positive");
    int64_t n, c, s;
    detail::split_ncs(v, n, c, s, "spatial_softmax");
    Tensor<T> out(v.shape);
    for (int64_t i = 0; i < n * c; ++i) {
        const T* in = v.ptr() + i * s;
        T* o = out.ptr() + i * s;
        T m = in[0];
        for (int64_t j = 1; j < s; ++j) m = std::max(m, in[j]);
        double z = 0;
        for (int64_t j = 0; j < s; ++j) {
            const T e = std::exp((in[j] - m) / tau);
            o[j] = e;
            z += double(e);
        }
        for (int64_t j = 0; j < s; ++j) o[j] = T(double(o[j]) / z);
    }
    return tape.emplace(std::move(out), tape.requires_grad(x),
                        [x, n, c, s, tau](Tape<T>& t, int self) {
                            const auto& g = t.grad(NodeId{self});
                            const auto& y = t.value(NodeId{self});
                            if (!t.requires_grad(x)) return;
                            auto& gx = t.grad(x);
                            for (int64_t i = 0; i < n * c; ++i) {
                                const T* yp = y.ptr() + i * s;
                                const T* gp = g.ptr() + i * s;
                                T* xp = gx.ptr() + i * s;
                                double dot = 0;
                                for (int64_t j = 0; j < s; ++j) dot += double(gp[j]) * double(yp[j]);
                                for (int64_t j = 0; j < s; ++j)
                                    xp[j] += yp[j] * (gp[j] - T(dot)) / tau;
                            }
                        });
}

// Expected spatial coordinate under a per-(batch,channel) probability map:
// [N,C,spatial...] -> [N,C,R] with out[n,c,a] = sum_v p(v) * v_a. Coordinates
// follow the tensor's spatial dim order.
template <typename T>
NodeId coord_expect(Tape<T>& tape, NodeId p) {
    const auto& v = tape.value(p);
    FEMSEG_REQUIRE(v.rank() >= 3, "coord_expect: expected [N,C,spatial...], got " +
                                      shape_str(v.shape));
    const int rank = v.rank() - 2;
    const int64_t n = v.shape[0], c = v.shape[1];
    std::vector<int64_t> ext(v.shape.begin() + 2, v.shape.end());
    int64_t s = 1;
    for (int64_t e : ext) s *= e;
    Tensor<T> out({n, c, rank});
    for (int64_t i = 0; i < n * c; ++i) {
        const T* pp = v.ptr() + i * s;
        std::vector<double> acc(size_t(rank), 0.0);
        std::vector<int64_t> idx(size_t(rank), 0);
        for (int64_t j = 0; j < s; ++j) {
            for (int a = 0; a < rank; ++a) acc[size_t(a)] += double(pp[j]) * double(idx[size_t(a)]);
            for (int a = rank - 1; a >= 0; --a) {
                if (++idx[size_t(a)] < ext[size_t(a)]) break;
                idx[size_t(a)] = 0;
            }
        }
        for (int a = 0; a < rank; ++a) out[i * rank + a] = T(acc[size_t(a)]);
    }
    auto extents = std::make_shared<std::vector<int64_t>>(ext);
    return tape.emplace(std::move(out), tape.requires_grad(p),
                        [p, n, c, s, rank, extents](Tape<T>& t, int self) {
                            const auto& g = t.grad(NodeId{self});
                            if (!t.requires_grad(p)) return;
                            auto& gp = t.grad(p);
                            for (int64_t i = 0; i < n * c; ++i) {
                                T* dst = gp.ptr() + i * s;
                                const T* gv = g.ptr() + i * rank;
                                std::vector<int64_t> idx(size_t(rank), 0);
                                for (int64_t j = 0; j < s; ++j) {
                                    T acc = T(0);
                                    for (int a = 0; a < rank; ++a)
                                        acc += gv[a] * T(idx[size_t(a)]);
                                    dst[j] += acc;
                                    for (int a = rank - 1; a >= 0; --a) {
                                        if (++idx[size_t(a)] < (*extents)[size_t(a)]) break;
                                        idx[size_t(a)] = 0;
                                    }
                                }
                            }
                        });
}

// Fully connected: x [N,C] * W [M,C] + b [M] -> [N,M].
template <typename T>
NodeId dense(Tape<T>& tape, NodeId x, NodeId w, NodeId b) {
    const auto& vx = tape.value(x);
    const auto& vw = tape.value(w);
    const auto& vb = tape.value(b);
    FEMSEG_REQUIRE(vx.rank() == 2 && vw.rank() == 2 && vb.rank() == 1,
                   "dense: expected x[N,C], W[M,C], b[M]; got " + shape_str(vx.shape) + ", " +
                       shape_str(vw.shape) + ", " + shape_str(vb.shape));
    const int64_t n = vx.shape[0], c = vx.shape[1], m = vw.shape[0];
    FEMSEG_REQUIRE(vw.shape[1] == c && vb.shape[0] == m,
                   "dense: shape mismatch x" + shape_str(vx.shape) + " W" + shape_str(vw.shape));
    Tensor<T> out({n, m});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) {
            double acc = double(vb[j]);
            const T* xp = vx.ptr() + i * c;
            const T* wp = vw.ptr() + j * c;
            for (int64_t k = 0; k < c; ++k) acc += double(xp[k]) * double(wp[k]);
            out[i * m + j] = T(acc);
        }
    bool rg = tape.requires_grad(x) || tape.requires_grad(w) || tape.requires_grad(b);
    return tape.emplace(std::move(out), rg, [x, w, b, n, c, m](Tape<T>& t, int self) {
        const auto& g = t.grad(NodeId{self});
        const auto& vx2 = t.value(x);
        const auto& vw2 = t.value(w);
        if (t.requires_grad(x)) {
            auto& gx = t.grad(x);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < m; ++j) {
                    const T gv = g[i * m + j];
                    const T* wp = vw2.ptr() + j * c;
                    T* dst = gx.ptr() + i * c;
                    for (int64_t k = 0; k < c; ++k) dst[k] += gv * wp[k];
                }
        }
        if (t.requires_grad(w)) {
            auto& gw = t.grad(w);
            for (int64_t j = 0; j < m; ++j)
                for (int64_t i = 0; i < n; ++i) {
                    const T gv = g[i * m + j];
                    const T* xp = vx2.ptr() + i * c;
                    T* dst = gw.ptr() + j * c;
                    for (int64_t k = 0; k < c; ++k) dst[k] += gv * xp[k];
                }
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad(b);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
        }
    });
}

} // namespace femseg::ad
