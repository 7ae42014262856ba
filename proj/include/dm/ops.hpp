#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "dm/rng.hpp"
#include "dm/tensor.hpp"

namespace dm {

namespace detail {
template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecCol = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using MapMat = Eigen::Map<MatRM<S>>;
template <typename S>
using MapConstMat = Eigen::Map<const MatRM<S>>;
template <typename S>
using MapStrided = Eigen::Map<MatRM<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using MapConstStrided = Eigen::Map<const MatRM<S>, 0, Eigen::OuterStride<>>;

// Output rows [t_lo, t_hi) whose input index t0*stride - pad + kk*dilation
// stays inside [0, len) for one kernel tap.
struct TapRange {
    int t_lo, rows, in_start;
};
inline TapRange tap_range(int len, int len_out, int stride, int pad_left, int tap_offset) {
    const int shift = pad_left - tap_offset; // t = t0*stride - shift
    int t_lo = shift <= 0 ? 0 : (shift + stride - 1) / stride;
    const int num = len - 1 + shift;
    int t_hi = num < 0 ? -1 : num / stride;
    t_hi = std::min(t_hi, len_out - 1);
    if (t_hi < t_lo) return {0, 0, 0};
    return {t_lo, t_hi - t_lo + 1, t_lo * stride - shift};
}
} // namespace detail

enum class Pad { valid, same };
enum class PoolKind { avg, max };

struct ConvGeometry {
    int len_out;
    int pad_left;
};

// Output length and left padding for a strided, dilated 1-D window.
// same: stride-aware symmetric zero padding, extra element on the right,
// so len_out == ceil(L / stride). valid: window must fit unpadded.
inline ConvGeometry conv_geometry(int len, int k, int stride, int dilation, Pad pad) {
    if (k < 1 || stride < 1 || dilation < 1) throw ShapeError("conv: k, stride, dilation must be >= 1");
    const int span = dilation * (k - 1) + 1;
    if (pad == Pad::valid) {
        if (span > len) throw ShapeError("conv: effective kernel span exceeds input length");
        return {(len - span) / stride + 1, 0};
    }
    const int len_out = (len + stride - 1) / stride;
    const int pad_total = std::max((len_out - 1) * stride + span - len, 0);
    return {len_out, pad_total / 2};
}

// ---------------------------------------------------------------------------
// conv1d: cross-correlation over the leading (time) axis.
//   x [L, Cin], w [k, Cin, Cout], b [Cout] -> [L', Cout]
// ---------------------------------------------------------------------------
template <typename S>
TensorT<S> conv1d(GraphT<S>& g, const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b,
                  int stride, int dilation, Pad pad) {
    if (x.ndim() != 2 || w.ndim() != 3 || b.ndim() != 1) throw ShapeError("conv1d: bad ranks");
    const int len = x.shape[0], cin = x.shape[1];
    const int k = w.shape[0], cout = w.shape[2];
    if (w.shape[1] != cin) throw ShapeError("conv1d: weight Cin mismatch");
    if (b.shape[0] != cout) throw ShapeError("conv1d: bias Cout mismatch");
    const auto geo = conv_geometry(len, k, stride, dilation, pad);

    TensorT<S> out = zeros<S>({geo.len_out, cout});
    {
        detail::MapMat<S> om(out.ptr(), geo.len_out, cout);
        detail::MapConstMat<S> bm(b.ptr(), 1, cout);
        om.rowwise() = bm.row(0);
        const Eigen::OuterStride<> xs(static_cast<Eigen::Index>(stride) * cin);
        for (int kk = 0; kk < k; ++kk) {
            const auto r = detail::tap_range(len, geo.len_out, stride, geo.pad_left, kk * dilation);
            if (r.rows == 0) continue;
            detail::MapConstStrided<S> xm(x.ptr() + static_cast<std::size_t>(r.in_start) * cin,
                                          r.rows, cin, xs);
            detail::MapConstMat<S> wk(w.ptr() + static_cast<std::size_t>(kk) * cin * cout, cin, cout);
            om.middleRows(r.t_lo, r.rows).noalias() += xm * wk;
        }
    }
    detail::check_finite(out, "conv1d");

    if (g.training() && (x.requires_grad || w.requires_grad || b.requires_grad)) {
        TensorT<S> xc = x, wc = w, bc = b;
        out.ensure_grad();
        TensorT<S> oc = out;
        g.record([xc, wc, bc, oc, stride, dilation, geo, len, cin, k, cout]() mutable {
            detail::MapConstMat<S> gym(oc.grad_ptr(), geo.len_out, cout);
            if (bc.requires_grad) {
                Eigen::Map<detail::VecCol<S>> gbm(bc.grad_ptr(), cout);
                gbm.noalias() += gym.colwise().sum().transpose();
            }
            const Eigen::OuterStride<> xs(static_cast<Eigen::Index>(stride) * cin);
            for (int kk = 0; kk < k; ++kk) {
                const auto r = detail::tap_range(len, geo.len_out, stride, geo.pad_left, kk * dilation);
                if (r.rows == 0) continue;
                const auto gy_rows = gym.middleRows(r.t_lo, r.rows);
                if (wc.requires_grad) {
                    detail::MapConstStrided<S> xm(xc.ptr() + static_cast<std::size_t>(r.in_start) * cin,
                                                  r.rows, cin, xs);
                    detail::MapMat<S> gwk(wc.grad_ptr() + static_cast<std::size_t>(kk) * cin * cout,
                                          cin, cout);
                    gwk.noalias() += xm.transpose() * gy_rows;
                }
                if (xc.requires_grad) {
                    detail::MapConstMat<S> wk(wc.ptr() + static_cast<std::size_t>(kk) * cin * cout,
                                              cin, cout);
                    detail::MapStrided<S> gxm(xc.grad_ptr() + static_cast<std::size_t>(r.in_start) * cin,
                                              r.rows, cin, xs);
                    gxm.noalias() += gy_rows * wk.transpose();
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear: affine map over the trailing axis. x [L, Din] or [Din].
// ---------------------------------------------------------------------------
template <typename S>
TensorT<S> linear(GraphT<S>& g, const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
    if (w.ndim() != 2 || b.ndim() != 1) throw ShapeError("linear: bad weight/bias rank");
    const int din = w.shape[0], dout = w.shape[1];
    if (b.shape[0] != dout) throw ShapeError("linear: bias mismatch");
    const bool vec = x.ndim() == 1;
    const int rows = vec ? 1 : x.shape[0];
    const int xin = vec ? x.shape[0] : x.shape[1];
    if (xin != din) throw ShapeError("linear: trailing dim != Din");

    TensorT<S> out = vec ? zeros<S>({dout}) : zeros<S>({rows, dout});
    {
        detail::MapMat<S> om(out.ptr(), rows, dout);
        detail::MapConstMat<S> xm(x.ptr(), rows, din);
        detail::MapConstMat<S> wm(w.ptr(), din, dout);
        detail::MapConstMat<S> bm(b.ptr(), 1, dout);
        om.noalias() = xm * wm;
        om.rowwise() += bm.row(0);
    }
    detail::check_finite(out, "linear");

    if (g.training() && (x.requires_grad || w.requires_grad || b.requires_grad)) {
        TensorT<S> xc = x, wc = w, bc = b;
        out.ensure_grad();
        TensorT<S> oc = out;
        g.record([xc, wc, bc, oc, rows, din, dout]() mutable {
            detail::MapConstMat<S> gym(oc.grad_ptr(), rows, dout);
            if (bc.requires_grad) {
                Eigen::Map<detail::VecCol<S>> gbm(bc.grad_ptr(), dout);
                gbm.noalias() += gym.colwise().sum().transpose();
            }
            if (wc.requires_grad) {
                detail::MapConstMat<S> xm(xc.ptr(), rows, din);
                detail::MapMat<S> gwm(wc.grad_ptr(), din, dout);
                gwm.noalias() += xm.transpose() * gym;
            }
            if (xc.requires_grad) {
                detail::MapConstMat<S> wm(wc.ptr(), din, dout);
                detail::MapMat<S> gxm(xc.grad_ptr(), rows, din);
                gxm.noalias() += gym * wm.transpose();
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer_norm: per-position normalization over the channel axis (population
// variance), then per-channel affine. x [L, C].
// ---------------------------------------------------------------------------
template <typename S>
TensorT<S> layer_norm(GraphT<S>& g, const TensorT<S>& x, const TensorT<S>& gamma,
                      const TensorT<S>& beta, S eps) {
    if (x.ndim() != 2) throw ShapeError("layer_norm: x must be 2-D");
    const int rows = x.shape[0], c = x.shape[1];
    if (gamma.ndim() != 1 || gamma.shape[0] != c || beta.ndim() != 1 || beta.shape[0] != c)
        throw ShapeError("layer_norm: gamma/beta mismatch");

    TensorT<S> out = zeros<S>({rows, c});
    // x_hat and 1/sigma are kept for backward.
    auto xhat = std::make_shared<AlignedBuffer<S>>(static_cast<std::size_t>(rows) * c);
    auto inv_sigma = std::make_shared<AlignedBuffer<S>>(rows);
    {
        detail::MapConstMat<S> xm(x.ptr(), rows, c);
        detail::MapMat<S> hm(xhat->data(), rows, c);
        Eigen::Map<detail::VecCol<S>> inv(inv_sigma->data(), rows);
        Eigen::Map<const detail::VecCol<S>> gm(gamma.ptr(), c), bm(beta.ptr(), c);
        detail::MapMat<S> om(out.ptr(), rows, c);

        const detail::VecCol<S> mean = xm.rowwise().mean();
        hm = xm.colwise() - mean;
        inv = ((hm.array().square().rowwise().sum() / static_cast<S>(c)) + eps).rsqrt();
        hm.array().colwise() *= inv.array();
        om = hm.array().rowwise() * gm.transpose().array();
        om.array().rowwise() += bm.transpose().array();
    }
    detail::check_finite(out, "layer_norm");

    if (g.training() && (x.requires_grad || gamma.requires_grad || beta.requires_grad)) {
        TensorT<S> xc = x, gc = gamma, bc = beta;
        out.ensure_grad();
        TensorT<S> oc = out;
        g.record([xc, gc, bc, oc, xhat, inv_sigma, rows, c]() mutable {
            detail::MapConstMat<S> gym(oc.grad_ptr(), rows, c);
            detail::MapConstMat<S> hm(xhat->data(), rows, c);
            Eigen::Map<const detail::VecCol<S>> inv(inv_sigma->data(), rows);
            if (gc.requires_grad) {
                Eigen::Map<detail::VecCol<S>> gg(gc.grad_ptr(), c);
                gg.noalias() += (gym.array() * hm.array()).colwise().sum().matrix().transpose();
            }
            if (bc.requires_grad) {
                Eigen::Map<detail::VecCol<S>> gb(bc.grad_ptr(), c);
                gb.noalias() += gym.colwise().sum().transpose();
            }
            if (xc.requires_grad) {
                Eigen::Map<const detail::VecCol<S>> gm(gc.ptr(), c);
                detail::MapMat<S> gxm(xc.grad_ptr(), rows, c);
                detail::MatRM<S> gscaled = gym.array().rowwise() * gm.transpose().array();
                const detail::VecCol<S> mg = gscaled.rowwise().mean();
                const detail::VecCol<S> mgh = (gscaled.array() * hm.array()).rowwise().mean();
                gxm.array() += (((gscaled.colwise() - mg).array() -
                                 hm.array().colwise() * mgh.array()).colwise() *
                                inv.array());
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise activations.
// ---------------------------------------------------------------------------
namespace detail {
template <typename S>
inline S gelu_tanh(S x) {
    // tanh approximation, 0.044715 cubic constant.
    const S c0 = S(0.7978845608028654); // sqrt(2/pi)
    const S c1 = S(0.044715);
    return S(0.5) * x * (S(1) + std::tanh(c0 * (x + c1 * x * x * x)));
}
template <typename S>
inline S gelu_tanh_grad(S x) {
    const S c0 = S(0.7978845608028654);
    const S c1 = S(0.044715);
    const S u = c0 * (x + c1 * x * x * x);
    const S t = std::tanh(u);
    const S du = c0 * (S(1) + S(3) * c1 * x * x);
    return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * du;
}
} // namespace detail

template <typename S>
TensorT<S> gelu(GraphT<S>& g, const TensorT<S>& x) {
    TensorT<S> out = zeros<S>(x.shape);
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = detail::gelu_tanh((*x.data)[i]);
    detail::check_finite(out, "gelu");
    if (g.training() && x.requires_grad) {
        TensorT<S> xc = x;
        out.ensure_grad();
        TensorT<S> oc = out;
        g.record([xc, oc, n]() mutable {
            const S* __restrict gy = oc.grad_ptr();
            const S* __restrict xp = xc.ptr();
            S* __restrict gx = xc.grad_ptr();
            for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * detail::gelu_tanh_grad(xp[i]);
        });
    }
    return out;
}

template <typename S>
TensorT<S> sigmoid(GraphT<S>& g, const TensorT<S>& x) {
    TensorT<S> out = zeros<S>(x.shape);
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = S(1) / (S(1) + std::exp(-(*x.data)[i]));
    detail::check_finite(out, "sigmoid");
    if (g.training() && x.requires_grad) {
        TensorT<S> xc = x;
        out.ensure_grad();
        TensorT<S> oc = out;
        g.record([xc, oc, n]() mutable {
            const S* __restrict gy = oc.grad_ptr();
            const S* __restrict yp = oc.ptr();
            S* __restrict gx = xc.grad_ptr();
            for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * yp[i] * (S(1) - yp[i]);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// maxpool1d: windowed max per channel; same padding fills with -inf.
// Ties route the gradient to the first maximum in the window.
// ---------------------------------------------------------------------------
template <typename S>
TensorT<S> maxpool1d(GraphT<S>& g, const TensorT<S>& x, int k, int stride, Pad pad) {
    if (x.ndim() != 2) throw ShapeError("maxpool1d: x must be 2-D");
    const int len = x.shape[0], c = x.shape[1];
    const auto geo = conv_geometry(len, k, stride, 1, pad);

    TensorT<S> out = zeros<S>({geo.len_out, c});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(geo.len_out) * c);
    {
        const S* __restrict xp = x.ptr();
        S* __restrict op = out.ptr();
        std::int32_t* __restrict ap = argmax->data();
        for (int t0 = 0; t0 < geo.len_out; ++t0) {
            const int in_base = t0 * stride - geo.pad_left;
            S* __restrict orow = op + static_cast<std::size_t>(t0) * c;
            std::int32_t* __restrict arow = ap + static_cast<std::size_t>(t0) * c;
            for (int i = 0; i < c; ++i) {
                orow[i] = -std::numeric_limits<S>::infinity();
                arow[i] = -1;
            }
            for (int kk = 0; kk < k; ++kk) {
                const int t = in_base + kk;
                if (t < 0 || t >= len) continue;
                const S* __restrict xrow = xp + static_cast<std::size_t>(t) * c;
                for (int i = 0; i < c; ++i) {
                    if (xrow[i] > orow[i]) {
                        orow[i] = xrow[i];
                        arow[i] = t;
                    }
                }
            }
        }
    }
    detail::check_finite(out, "maxpool1d");

    if (g.training() && x.requires_grad) {
        TensorT<S> xc = x;
        out.ensure_grad();
        TensorT<S> oc = out;
        g.record([xc, oc, argmax, c]() mutable {
            const S* __restrict gy = oc.grad_ptr();
            S* __restrict gx = xc.grad_ptr();
            const std::int32_t* __restrict ap = argmax->data();
            const std::size_t n = oc.numel();
            for (std::size_t j = 0; j < n; ++j) {
                const std::int32_t t = ap[j];
                if (t >= 0) gx[static_cast<std::size_t>(t) * c + (j % c)] += gy[j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// global_pool: reduce the time axis to one value per channel; an optional
// boolean mask restricts the reduction to unmasked positions.
// ---------------------------------------------------------------------------
template <typename S>
TensorT<S> global_pool(GraphT<S>& g, const TensorT<S>& x, PoolKind kind,
                       const std::vector<std::uint8_t>* mask = nullptr) {
    if (x.ndim() != 2) throw ShapeError("global_pool: x must be 2-D");
    const int len = x.shape[0], c = x.shape[1];
    if (mask && static_cast<int>(mask->size()) != len) throw ShapeError("global_pool: mask length mismatch");
    int live = 0;
    for (int t = 0; t < len; ++t)
        if (!mask || (*mask)[t]) ++live;
    if (live == 0) throw MaskError("global_pool: all positions masked");

    TensorT<S> out = zeros<S>({c});
    auto argmax = kind == PoolKind::max
                      ? std::make_shared<std::vector<std::int32_t>>(c, -1)
                      : nullptr;
    {
        const S* __restrict xp = x.ptr();
        S* __restrict op = out.ptr();
        if (kind == PoolKind::avg) {
            for (int t = 0; t < len; ++t) {
                if (mask && !(*mask)[t]) continue;
                const S* __restrict xrow = xp + static_cast<std::size_t>(t) * c;
                for (int i = 0; i < c; ++i) op[i] += xrow[i];
            }
            for (int i = 0; i < c; ++i) op[i] /= static_cast<S>(live);
        } else {
            for (int i = 0; i < c; ++i) op[i] = -std::numeric_limits<S>::infinity();
            for (int t = 0; t < len; ++t) {
                if (mask && !(*mask)[t]) continue;
                const S* __restrict xrow = xp + static_cast<std::size_t>(t) * c;
                for (int i = 0; i < c; ++i) {
                    if (xrow[i] > op[i]) {
                        op[i] = xrow[i];
                        (*argmax)[i] = t;
                    }
                }
            }
        }
    }
    detail::check_finite(out, "global_pool");

    if (g.training() && x.requires_grad) {
        TensorT<S> xc = x;
        out.ensure_grad();
        TensorT<S> oc = out;
        std::vector<std::uint8_t> mcopy = mask ? *mask : std::vector<std::uint8_t>();
        g.record([xc, oc, argmax, kind, live, len, c, mcopy]() mutable {
            const S* __restrict gy = oc.grad_ptr();
            S* __restrict gx = xc.grad_ptr();
            if (kind == PoolKind::avg) {
                for (int t = 0; t < len; ++t) {
                    if (!mcopy.empty() && !mcopy[t]) continue;
                    S* __restrict gxrow = gx + static_cast<std::size_t>(t) * c;
                    for (int i = 0; i < c; ++i) gxrow[i] += gy[i] / static_cast<S>(live);
                }
            } else {
                for (int i = 0; i < c; ++i) {
                    const std::int32_t t = (*argmax)[i];
                    if (t >= 0) gx[static_cast<std::size_t>(t) * c + i] += gy[i];
                }
            }
        });
    }
    return out;
}

// Reduce the channel axis to one value per position: [L, C] -> [L, 1].
template <typename S>
TensorT<S> pool_channels(GraphT<S>& g, const TensorT<S>& x, PoolKind kind) {
    if (x.ndim() != 2) throw ShapeError("pool_channels: x must be 2-D");
    const int len = x.shape[0], c = x.shape[1];
    TensorT<S> out = zeros<S>({len, 1});
    auto argmax = kind == PoolKind::max
                      ? std::make_shared<std::vector<std::int32_t>>(len, 0)
                      : nullptr;
    {
        const S* __restrict xp = x.ptr();
        S* __restrict op = out.ptr();
        for (int t = 0; t < len; ++t) {
            const S* __restrict xrow = xp + static_cast<std::size_t>(t) * c;
            if (kind == PoolKind::avg) {
                S acc = S(0);
                for (int i = 0; i < c; ++i) acc += xrow[i];
                op[t] = acc / static_cast<S>(c);
            } else {
                S best = xrow[0];
                int bi = 0;
                for (int i = 1; i < c; ++i)
                    if (xrow[i] > best) {
                        best = xrow[i];
                        bi = i;
                    }
                op[t] = best;
                (*argmax)[t] = bi;
            }
        }
    }
    detail::check_finite(out, "pool_channels");

    if (g.training() && x.requires_grad) {
        TensorT<S> xc = x;
        out.ensure_grad();
        TensorT<S> oc = out;
        g.record([xc, oc, argmax, kind, len, c]() mutable {
            const S* __restrict gy = oc.grad_ptr();
            S* __restrict gx = xc.grad_ptr();
            for (int t = 0; t < len; ++t) {
                if (kind == PoolKind::avg) {
                    S* __restrict gxrow = gx + static_cast<std::size_t>(t) * c;
                    const S gv = gy[t] / static_cast<S>(c);
                    for (int i = 0; i < c; ++i) gxrow[i] += gv;
                } else {
                    gx[static_cast<std::size_t>(t) * c + (*argmax)[t]] += gy[t];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// dropout: inverted dropout in train mode, identity in infer mode.
// ---------------------------------------------------------------------------
template <typename S>
TensorT<S> dropout(GraphT<S>& g, const TensorT<S>& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must satisfy 0 <= p < 1");
    if (!g.training() || p == 0.0) return x;

    const std::size_t n = x.numel();
    const S scale = S(1.0 / (1.0 - p));
    auto keep = std::make_shared<std::vector<std::uint8_t>>(n);
    TensorT<S> out = zeros<S>(x.shape);
    for (std::size_t i = 0; i < n; ++i) {
        const bool kept = !rng.bernoulli(p);
        (*keep)[i] = kept;
        (*out.data)[i] = kept ? (*x.data)[i] * scale : S(0);
    }
    if (x.requires_grad) {
        TensorT<S> xc = x;
        out.ensure_grad();
        TensorT<S> oc = out;
        g.record([xc, oc, keep, scale, n]() mutable {
            const S* __restrict gy = oc.grad_ptr();
            S* __restrict gx = xc.grad_ptr();
            for (std::size_t i = 0; i < n; ++i)
                if ((*keep)[i]) gx[i] += gy[i] * scale;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structural ops.
// ---------------------------------------------------------------------------
template <typename S>
TensorT<S> add(GraphT<S>& g, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape != b.shape) throw ShapeError("add: shape mismatch");
    TensorT<S> out = zeros<S>(a.shape);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
    if (g.training() && (a.requires_grad || b.requires_grad)) {
        TensorT<S> ac = a, bc = b;
        out.ensure_grad();
        TensorT<S> oc = out;
        g.record([ac, bc, oc, n]() mutable {
            const S* __restrict gy = oc.grad_ptr();
            if (ac.requires_grad) {
                S* __restrict ga = ac.grad_ptr();
                for (std::size_t i = 0; i < n; ++i) ga[i] += gy[i];
            }
            if (bc.requires_grad) {
                S* __restrict gb = bc.grad_ptr();
                for (std::size_t i = 0; i < n; ++i) gb[i] += gy[i];
            }
        });
    }
    return out;
}

// concat along axis (0 or 1 for matrices, 0 for vectors).
template <typename S>
TensorT<S> concat(GraphT<S>& g, const std::vector<TensorT<S>>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: empty input list");
    const int nd = xs[0].ndim();
    if (axis < 0 || axis >= nd) throw ShapeError("concat: bad axis");
    std::vector<int> shape = xs[0].shape;
    int total = 0;
    for (const auto& t : xs) {
        if (t.ndim() != nd) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < nd; ++i)
            if (i != axis && t.shape[i] != shape[i]) throw ShapeError("concat: shape mismatch");
        total += t.shape[axis];
    }
    shape[axis] = total;
    TensorT<S> out = zeros<S>(shape);

    // Copy views: vectors and axis-0 matrices are contiguous blocks; axis-1
    // matrices interleave per row.
    if (nd == 1 || axis == 0) {
        std::size_t off = 0;
        for (const auto& t : xs) {
            std::copy(t.data->begin(), t.data->end(), out.data->begin() + off);
            off += t.numel();
        }
    } else {
        const int rows = shape[0];
        int col_off = 0;
        for (const auto& t : xs) {
            const int tc = t.shape[1];
            for (int r = 0; r < rows; ++r)
                std::copy(t.data->begin() + static_cast<std::size_t>(r) * tc,
                          t.data->begin() + static_cast<std::size_t>(r + 1) * tc,
                          out.data->begin() + static_cast<std::size_t>(r) * total + col_off);
            col_off += tc;
        }
    }

    bool need = false;
    for (const auto& t : xs) need = need || t.requires_grad;
    if (g.training() && need) {
        std::vector<TensorT<S>> cs = xs;
        out.ensure_grad();
        TensorT<S> oc = out;
        const int rows = nd == 2 ? shape[0] : 1;
        g.record([cs, oc, axis, nd, rows, total]() mutable {
            const S* __restrict gy = oc.grad_ptr();
            if (nd == 1 || axis == 0) {
                std::size_t off = 0;
                for (auto& t : cs) {
                    if (t.requires_grad) {
                        S* __restrict gt = t.grad_ptr();
                        const std::size_t n = t.numel();
                        for (std::size_t i = 0; i < n; ++i) gt[i] += gy[off + i];
                    }
                    off += t.numel();
                }
            } else {
                int col_off = 0;
                for (auto& t : cs) {
                    const int tc = t.shape[1];
                    if (t.requires_grad) {
                        S* __restrict gt = t.grad_ptr();
                        for (int r = 0; r < rows; ++r)
                            for (int i = 0; i < tc; ++i)
                                gt[static_cast<std::size_t>(r) * tc + i] +=
                                    gy[static_cast<std::size_t>(r) * total + col_off + i];
                    }
                    col_off += tc;
                }
            }
        });
    }
    return out;
}

// Stack N vectors of length C into an [N, C] matrix.
template <typename S>
TensorT<S> stack_rows(GraphT<S>& g, const std::vector<TensorT<S>>& xs) {
    if (xs.empty()) throw DataError("stack_rows: empty input list");
    const int c = xs[0].shape[0];
    for (const auto& t : xs)
        if (t.ndim() != 1 || t.shape[0] != c) throw ShapeError("stack_rows: need equal-length vectors");
    TensorT<S> out = zeros<S>({static_cast<int>(xs.size()), c});
    for (std::size_t r = 0; r < xs.size(); ++r)
        std::copy(xs[r].data->begin(), xs[r].data->end(),
                  out.data->begin() + r * static_cast<std::size_t>(c));

    bool need = false;
    for (const auto& t : xs) need = need || t.requires_grad;
    if (g.training() && need) {
        std::vector<TensorT<S>> cs = xs;
        out.ensure_grad();
        TensorT<S> oc = out;
        g.record([cs, oc, c]() mutable {
            const S* __restrict gy = oc.grad_ptr();
            for (std::size_t r = 0; r < cs.size(); ++r) {
                if (!cs[r].requires_grad) continue;
                S* __restrict gt = cs[r].grad_ptr();
                for (int i = 0; i < c; ++i) gt[i] += gy[r * static_cast<std::size_t>(c) + i];
            }
        });
    }
    return out;
}

// x [L, C] scaled per channel by s [C] (broadcast along time).
template <typename S>
TensorT<S> mul_channels(GraphT<S>& g, const TensorT<S>& x, const TensorT<S>& s) {
    if (x.ndim() != 2 || s.ndim() != 1 || s.shape[0] != x.shape[1])
        throw ShapeError("mul_channels: shape mismatch");
    const int len = x.shape[0], c = x.shape[1];
    TensorT<S> out = zeros<S>({len, c});
    for (int t = 0; t < len; ++t)
        for (int i = 0; i < c; ++i) out.at(t, i) = x.at(t, i) * s.at(i);
    if (g.training() && (x.requires_grad || s.requires_grad)) {
        TensorT<S> xc = x, sc = s;
        out.ensure_grad();
        TensorT<S> oc = out;
        g.record([xc, sc, oc, len, c]() mutable {
            const S* __restrict gy = oc.grad_ptr();
            const S* __restrict xp = xc.ptr();
            const S* __restrict sp = sc.ptr();
            S* __restrict gx = xc.requires_grad ? xc.grad_ptr() : nullptr;
            S* __restrict gs = sc.requires_grad ? sc.grad_ptr() : nullptr;
            for (int t = 0; t < len; ++t) {
                const std::size_t row = static_cast<std::size_t>(t) * c;
                for (int i = 0; i < c; ++i) {
                    if (gx) gx[row + i] += gy[row + i] * sp[i];
                    if (gs) gs[i] += gy[row + i] * xp[row + i];
                }
            }
        });
    }
    return out;
}

// x [L, C] scaled per position by t [L, 1] (broadcast along channels).
template <typename S>
TensorT<S> mul_positions(GraphT<S>& g, const TensorT<S>& x, const TensorT<S>& t) {
    if (x.ndim() != 2 || t.ndim() != 2 || t.shape[0] != x.shape[0] || t.shape[1] != 1)
        throw ShapeError("mul_positions: shape mismatch");
    const int len = x.shape[0], c = x.shape[1];
    TensorT<S> out = zeros<S>({len, c});
    for (int r = 0; r < len; ++r)
        for (int i = 0; i < c; ++i) out.at(r, i) = x.at(r, i) * t.at(r, 0);
    if (g.training() && (x.requires_grad || t.requires_grad)) {
        TensorT<S> xc = x, tc = t;
        out.ensure_grad();
        TensorT<S> oc = out;
        g.record([xc, tc, oc, len, c]() mutable {
            const S* __restrict gy = oc.grad_ptr();
            const S* __restrict xp = xc.ptr();
            const S* __restrict tp = tc.ptr();
            S* __restrict gx = xc.requires_grad ? xc.grad_ptr() : nullptr;
            S* __restrict gt = tc.requires_grad ? tc.grad_ptr() : nullptr;
            for (int r = 0; r < len; ++r) {
                const std::size_t row = static_cast<std::size_t>(r) * c;
                S acc = S(0);
                for (int i = 0; i < c; ++i) {
                    if (gx) gx[row + i] += gy[row + i] * tp[r];
                    acc += gy[row + i] * xp[row + i];
                }
                if (gt) gt[r] += acc;
            }
        });
    }
    return out;
}

// Sum of all elements -> scalar. Mostly a test utility for building scalar
// objectives over tensor-valued ops.
template <typename S>
TensorT<S> sum_all(GraphT<S>& g, const TensorT<S>& x) {
    TensorT<S> out = zeros<S>({1});
    S acc = S(0);
    for (S v : *x.data) acc += v;
    (*out.data)[0] = acc;
    if (g.training() && x.requires_grad) {
        TensorT<S> xc = x;
        out.ensure_grad();
        TensorT<S> oc = out;
        g.record([xc, oc]() mutable {
            const S gy = (*oc.grad)[0];
            S* __restrict gx = xc.grad_ptr();
            const std::size_t n = xc.numel();
            for (std::size_t i = 0; i < n; ++i) gx[i] += gy;
        });
    }
    return out;
}

// Mean squared error between scalar predictions and fixed targets.
template <typename S>
TensorT<S> mse_loss(GraphT<S>& g, const std::vector<TensorT<S>>& preds, const std::vector<S>& targets) {
    if (preds.empty() || preds.size() != targets.size())
        throw DataError("mse_loss: need equal, nonzero prediction/target counts");
    const std::size_t n = preds.size();
    S acc = S(0);
    for (std::size_t i = 0; i < n; ++i) {
        if (preds[i].numel() != 1) throw ShapeError("mse_loss: predictions must be scalar");
        const S d = (*preds[i].data)[0] - targets[i];
        acc += d * d;
    }
    TensorT<S> out = scalar_tensor<S>(acc / static_cast<S>(n));
    bool need = false;
    for (const auto& p : preds) need = need || p.requires_grad;
    if (g.training() && need) {
        std::vector<TensorT<S>> pc = preds;
        std::vector<S> tc = targets;
        out.ensure_grad();
        TensorT<S> oc = out;
        g.record([pc, tc, oc, n]() mutable {
            const S gy = (*oc.grad)[0];
            for (std::size_t i = 0; i < n; ++i) {
                if (!pc[i].requires_grad) continue;
                const S d = (*pc[i].data)[0] - tc[i];
                (*pc[i].grad)[0] += gy * S(2) * d / static_cast<S>(n);
            }
        });
    }
    return out;
}

} // namespace dm
