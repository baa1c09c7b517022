#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sav/common.hpp"
#include "sav/tensor.hpp"

namespace sav {

// Reverse-mode tape. Ops append nodes; backward() walks the tape in reverse.
// A Var with id == -1 is a constant: no grad storage, and ops skip its
// gradient entirely. With recording off, every op returns a constant and the
// tape stays empty, so inference holds no activation references.
template <typename T>
struct Var {
    Tensor5<T> value;
    int id = -1;

    bool tracked() const { return id >= 0; }
};

template <typename T>
class Graph {
public:
    explicit Graph(bool recording = true) : rec_(recording) {}

    bool recording() const { return rec_; }

    Var<T> constant(Tensor5<T> v) const { return {std::move(v), -1}; }

    // Parameter leaf. The value shares storage with the caller's tensor;
    // gradients are read back by name after backward().
    Var<T> param(const std::string& name, const Tensor5<T>& v) {
        if (!rec_) return {v, -1};
        int id = add_node(v.shape());
        if (!param_ids_.emplace(name, id).second)
            throw std::invalid_argument("duplicate parameter on tape: " + name);
        return {v, id};
    }

    // Create an op node. `build` receives this node's (shared) grad tensor
    // and returns the backward closure.
    template <typename BuildFn>
    Var<T> make(Tensor5<T> v, BuildFn&& build) {
        if (!rec_) return {std::move(v), -1};
        int id = add_node(v.shape());
        nodes_[id].back = build(nodes_[id].grad);
        return {std::move(v), id};
    }

    // Shared handle to a var's grad buffer (empty tensor for constants).
    Tensor5<T> grad_of(const Var<T>& v) {
        if (!v.tracked()) return Tensor5<T>();
        return nodes_[v.id].grad;
    }

    void backward(const Var<T>& root, const Tensor5<T>& seed) {
        if (!rec_) throw std::logic_error("backward() on a non-recording graph");
        if (!root.tracked()) throw std::logic_error("backward() from an untracked var");
        if (!nodes_[root.id].grad.same_shape(seed)) throw std::invalid_argument("backward seed shape mismatch");
        T* g = nodes_[root.id].grad.data();
        const T* s = seed.data();
        for (int64_t i = 0; i < seed.size(); ++i) g[i] += s[i];
        for (int id = root.id; id >= 0; --id)
            if (nodes_[id].back) nodes_[id].back();
    }

    const Tensor5<T>& grad(const std::string& param_name) const {
        auto it = param_ids_.find(param_name);
        if (it == param_ids_.end()) throw std::out_of_range("no parameter on tape: " + param_name);
        return nodes_[it->second].grad;
    }

    bool has_param(const std::string& name) const { return param_ids_.count(name) != 0; }
    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor5<T> grad;
        std::function<void()> back;
    };

    int add_node(const typename Tensor5<T>::Shape& s) {
        nodes_.push_back(Node{Tensor5<T>(s), nullptr});
        return static_cast<int>(nodes_.size()) - 1;
    }

    bool rec_;
    std::vector<Node> nodes_;
    std::unordered_map<std::string, int> param_ids_;
};

namespace nn_detail {

template <typename T>
inline void accum(Tensor5<T>& dst, const Tensor5<T>& src) {
    T* d = dst.data();
    const T* s = src.data();
    for (int64_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace nn_detail

// ------------------------------------------------------------------ conv ---
// Weights are stored as a 5D array indexed (KH, KW, KD, Cin, Cout) — the
// Tensor5 axis names don't apply. Bias shape: (1,1,1,1,Cout). Stride is
// always 1; padding keeps the output extent equal to the input extent, with
// the extra padding voxel on the trailing side for even effective kernels.
template <typename T>
Var<T> conv3d(Graph<T>& g, const Var<T>& x, const Var<T>& w, const Var<T>& b, Shape3 dilation = {1, 1, 1}) {
    const auto& xv = x.value;
    const auto& wv = w.value;
    const int N = static_cast<int>(xv.n()), H = static_cast<int>(xv.h()), W = static_cast<int>(xv.w());
    const int D = static_cast<int>(xv.d()), Ci = static_cast<int>(xv.c());
    const int KH = static_cast<int>(wv.n()), KW = static_cast<int>(wv.h()), KD = static_cast<int>(wv.w());
    const int WCi = static_cast<int>(wv.d()), Co = static_cast<int>(wv.c());
    if (WCi != Ci) throw std::invalid_argument("conv3d: weight Cin " + std::to_string(WCi) + " != input C " + std::to_string(Ci));
    if (b.value.size() != Co) throw std::invalid_argument("conv3d: bias size mismatch");
    for (int a : dilation)
        if (a < 1) throw std::invalid_argument("conv3d: dilation must be >= 1");

    const int dh = dilation[0], dw = dilation[1], dd = dilation[2];
    const int ph = ((KH - 1) * dh + 1) / 2, pw = ((KW - 1) * dw + 1) / 2, pd = ((KD - 1) * dd + 1) / 2;

    Tensor5<T> y(N, H, W, D, Co);
    const T* bp = b.value.data();
    for (int n = 0; n < N; ++n)
        for (int oh = 0; oh < H; ++oh)
            for (int ow = 0; ow < W; ++ow)
                for (int od = 0; od < D; ++od) {
                    T* yp = &y(n, oh, ow, od, 0);
                    for (int co = 0; co < Co; ++co) yp[co] = bp[co];
                    for (int kh = 0; kh < KH; ++kh) {
                        int ih = oh - ph + kh * dh;
                        if (ih < 0 || ih >= H) continue;
                        for (int kw = 0; kw < KW; ++kw) {
                            int iw = ow - pw + kw * dw;
                            if (iw < 0 || iw >= W) continue;
                            for (int kd = 0; kd < KD; ++kd) {
                                int id = od - pd + kd * dd;
                                if (id < 0 || id >= D) continue;
                                const T* xp = &xv(n, ih, iw, id, 0);
                                const T* wp = &wv(kh, kw, kd, 0, 0);
                                for (int ci = 0; ci < Ci; ++ci) {
                                    T val = xp[ci];
                                    const T* wr = wp + static_cast<int64_t>(ci) * Co;
                                    for (int co = 0; co < Co; ++co) yp[co] += val * wr[co];
                                }
                            }
                        }
                    }
                }
    SAV_DEBUG_CHECK_FINITE(y);

    return g.make(std::move(y), [&](Tensor5<T>& gy_ref) -> std::function<void()> {
        Tensor5<T> gy = gy_ref;
        Tensor5<T> xval = xv, wval = wv;
        Tensor5<T> gx = g.grad_of(x), gw = g.grad_of(w), gb = g.grad_of(b);
        bool track_x = x.tracked(), track_w = w.tracked(), track_b = b.tracked();
        return [=]() mutable {
            for (int n = 0; n < N; ++n)
                for (int oh = 0; oh < H; ++oh)
                    for (int ow = 0; ow < W; ++ow)
                        for (int od = 0; od < D; ++od) {
                            const T* gyp = &gy(n, oh, ow, od, 0);
                            if (track_b) {
                                T* gbp = gb.data();
                                for (int co = 0; co < Co; ++co) gbp[co] += gyp[co];
                            }
                            for (int kh = 0; kh < KH; ++kh) {
                                int ih = oh - ph + kh * dh;
                                if (ih < 0 || ih >= H) continue;
                                for (int kw = 0; kw < KW; ++kw) {
                                    int iw = ow - pw + kw * dw;
                                    if (iw < 0 || iw >= W) continue;
                                    for (int kd = 0; kd < KD; ++kd) {
                                        int id = od - pd + kd * dd;
                                        if (id < 0 || id >= D) continue;
                                        const T* xp = &xval(n, ih, iw, id, 0);
                                        const T* wp = &wval(kh, kw, kd, 0, 0);
                                        if (track_w) {
                                            T* gwp = &gw(kh, kw, kd, 0, 0);
                                            for (int ci = 0; ci < Ci; ++ci) {
                                                T val = xp[ci];
                                                T* gwr = gwp + static_cast<int64_t>(ci) * Co;
                                                for (int co = 0; co < Co; ++co) gwr[co] += val * gyp[co];
                                            }
                                        }
                                        if (track_x) {
                                            T* gxp = &gx(n, ih, iw, id, 0);
                                            for (int ci = 0; ci < Ci; ++ci) {
                                                const T* wr = wp + static_cast<int64_t>(ci) * Co;
                                                T acc = T(0);
                                                for (int co = 0; co < Co; ++co) acc += wr[co] * gyp[co];
                                                gxp[ci] += acc;
                                            }
                                        }
                                    }
                                }
                            }
                        }
        };
    });
}

// --------------------------------------------------------------- deconv ----
// Transposed convolution with kernel == stride (no tap overlap), the classic
// learned-upsampling setup. Weights (KH, KW, KD, Cin, Cout); output extent is
// the input extent times the kernel extent per axis.
template <typename T>
Var<T> tconv3d(Graph<T>& g, const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    const auto& xv = x.value;
    const auto& wv = w.value;
    const int N = static_cast<int>(xv.n()), H = static_cast<int>(xv.h()), W = static_cast<int>(xv.w());
    const int D = static_cast<int>(xv.d()), Ci = static_cast<int>(xv.c());
    const int KH = static_cast<int>(wv.n()), KW = static_cast<int>(wv.h()), KD = static_cast<int>(wv.w());
    const int WCi = static_cast<int>(wv.d()), Co = static_cast<int>(wv.c());
    if (WCi != Ci) throw std::invalid_argument("tconv3d: weight Cin mismatch");
    if (b.value.size() != Co) throw std::invalid_argument("tconv3d: bias size mismatch");

    Tensor5<T> y(N, static_cast<int64_t>(H) * KH, static_cast<int64_t>(W) * KW, static_cast<int64_t>(D) * KD, Co);
    const T* bp = b.value.data();
    for (int n = 0; n < N; ++n)
        for (int oh = 0; oh < H * KH; ++oh) {
            const int ih = oh / KH, kh = oh % KH;
            for (int ow = 0; ow < W * KW; ++ow) {
                const int iw = ow / KW, kw = ow % KW;
                for (int od = 0; od < D * KD; ++od) {
                    const int id = od / KD, kd = od % KD;
                    T* yp = &y(n, oh, ow, od, 0);
                    for (int co = 0; co < Co; ++co) yp[co] = bp[co];
                    const T* xp = &xv(n, ih, iw, id, 0);
                    const T* wp = &wv(kh, kw, kd, 0, 0);
                    for (int ci = 0; ci < Ci; ++ci) {
                        T val = xp[ci];
                        const T* wr = wp + static_cast<int64_t>(ci) * Co;
                        for (int co = 0; co < Co; ++co) yp[co] += val * wr[co];
                    }
                }
            }
        }
    SAV_DEBUG_CHECK_FINITE(y);

    return g.make(std::move(y), [&](Tensor5<T>& gy_ref) -> std::function<void()> {
        Tensor5<T> gy = gy_ref;
        Tensor5<T> xval = xv, wval = wv;
        Tensor5<T> gx = g.grad_of(x), gw = g.grad_of(w), gb = g.grad_of(b);
        bool track_x = x.tracked(), track_w = w.tracked(), track_b = b.tracked();
        return [=]() mutable {
            for (int n = 0; n < N; ++n)
                for (int oh = 0; oh < H * KH; ++oh) {
                    const int ih = oh / KH, kh = oh % KH;
                    for (int ow = 0; ow < W * KW; ++ow) {
                        const int iw = ow / KW, kw = ow % KW;
                        for (int od = 0; od < D * KD; ++od) {
                            const int id = od / KD, kd = od % KD;
                            const T* gyp = &gy(n, oh, ow, od, 0);
                            if (track_b) {
                                T* gbp = gb.data();
                                for (int co = 0; co < Co; ++co) gbp[co] += gyp[co];
                            }
                            const T* xp = &xval(n, ih, iw, id, 0);
                            if (track_w) {
                                T* gwp = &gw(kh, kw, kd, 0, 0);
                                for (int ci = 0; ci < Ci; ++ci) {
                                    T val = xp[ci];
                                    T* gwr = gwp + static_cast<int64_t>(ci) * Co;
                                    for (int co = 0; co < Co; ++co) gwr[co] += val * gyp[co];
                                }
                            }
                            if (track_x) {
                                const T* wp = &wval(kh, kw, kd, 0, 0);
                                T* gxp = &gx(n, ih, iw, id, 0);
                                for (int ci = 0; ci < Ci; ++ci) {
                                    const T* wr = wp + static_cast<int64_t>(ci) * Co;
                                    T acc = T(0);
                                    for (int co = 0; co < Co; ++co) acc += wr[co] * gyp[co];
                                    gxp[ci] += acc;
                                }
                            }
                        }
                    }
                }
        };
    });
}

// -------------------------------------------------------------- max pool ---
// Kernel == stride. Ties resolve to the first voxel in scan order, keeping
// the backward scatter deterministic.
template <typename T>
Var<T> maxpool3d(Graph<T>& g, const Var<T>& x, Shape3 kernel) {
    const auto& xv = x.value;
    const int N = static_cast<int>(xv.n()), H = static_cast<int>(xv.h()), W = static_cast<int>(xv.w());
    const int D = static_cast<int>(xv.d()), C = static_cast<int>(xv.c());
    const int kh = kernel[0], kw = kernel[1], kd = kernel[2];
    if (kh < 1 || kw < 1 || kd < 1) throw std::invalid_argument("maxpool3d: kernel must be >= 1");
    if (H % kh || W % kw || D % kd)
        throw std::invalid_argument("maxpool3d: input extent (" + std::to_string(H) + "," + std::to_string(W) + "," +
                                    std::to_string(D) + ") not divisible by pooling kernel " + shape3_str(kernel));

    const int OH = H / kh, OW = W / kw, OD = D / kd;
    Tensor5<T> y(N, OH, OW, OD, C);
    auto arg = std::make_shared<std::vector<int64_t>>(y.size());
    for (int n = 0; n < N; ++n)
        for (int oh = 0; oh < OH; ++oh)
            for (int ow = 0; ow < OW; ++ow)
                for (int od = 0; od < OD; ++od)
                    for (int c = 0; c < C; ++c) {
                        T best = xv(n, oh * kh, ow * kw, od * kd, c);
                        int64_t best_at = xv.offset(n, oh * kh, ow * kw, od * kd, c);
                        for (int a = 0; a < kh; ++a)
                            for (int bq = 0; bq < kw; ++bq)
                                for (int cq = 0; cq < kd; ++cq) {
                                    T v = xv(n, oh * kh + a, ow * kw + bq, od * kd + cq, c);
                                    if (v > best) {
                                        best = v;
                                        best_at = xv.offset(n, oh * kh + a, ow * kw + bq, od * kd + cq, c);
                                    }
                                }
                        y(n, oh, ow, od, c) = best;
                        (*arg)[y.offset(n, oh, ow, od, c)] = best_at;
                    }

    return g.make(std::move(y), [&](Tensor5<T>& gy_ref) -> std::function<void()> {
        if (!x.tracked()) return nullptr;
        Tensor5<T> gy = gy_ref;
        Tensor5<T> gx = g.grad_of(x);
        return [=]() mutable {
            T* gxp = gx.data();
            const T* gyp = gy.data();
            const auto& a = *arg;
            for (int64_t i = 0; i < gy.size(); ++i) gxp[a[i]] += gyp[i];
        };
    });
}

// ------------------------------------------------------------- group norm --
// Normalizes over (H,W,D) x a channel group per sample; gamma/beta are per
// channel, shape (1,1,1,1,C). Statistics accumulate in double regardless of T.
template <typename T>
Var<T> group_norm(Graph<T>& g, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups,
                  double eps = 1e-5) {
    const auto& xv = x.value;
    const int N = static_cast<int>(xv.n()), C = static_cast<int>(xv.c());
    const int64_t S = xv.h() * xv.w() * xv.d();  // spatial positions per sample
    if (groups < 1 || C % groups != 0)
        throw std::invalid_argument("group_norm: groups " + std::to_string(groups) + " must divide channels " +
                                    std::to_string(C));
    if (gamma.value.size() != C || beta.value.size() != C) throw std::invalid_argument("group_norm: affine size mismatch");
    const int Cg = C / groups;
    const double m = static_cast<double>(S) * Cg;

    Tensor5<T> y(xv.shape());
    auto xhat = std::make_shared<Tensor5<T>>(xv.shape());
    auto invstd = std::make_shared<std::vector<double>>(static_cast<size_t>(N) * groups);
    const T* gam = gamma.value.data();
    const T* bet = beta.value.data();
    for (int n = 0; n < N; ++n) {
        const T* xs = xv.data() + static_cast<int64_t>(n) * S * C;
        T* ys = y.data() + static_cast<int64_t>(n) * S * C;
        T* hs = xhat->data() + static_cast<int64_t>(n) * S * C;
        for (int gi = 0; gi < groups; ++gi) {
            const int c0 = gi * Cg;
            double sum = 0.0, sq = 0.0;
            for (int64_t p = 0; p < S; ++p)
                for (int cg = 0; cg < Cg; ++cg) {
                    double v = xs[p * C + c0 + cg];
                    sum += v;
                    sq += v * v;
                }
            double mu = sum / m;
            double var = std::max(sq / m - mu * mu, 0.0);
            double is = 1.0 / std::sqrt(var + eps);
            (*invstd)[static_cast<size_t>(n) * groups + gi] = is;
            for (int64_t p = 0; p < S; ++p)
                for (int cg = 0; cg < Cg; ++cg) {
                    int c = c0 + cg;
                    T h = static_cast<T>((xs[p * C + c] - mu) * is);
                    hs[p * C + c] = h;
                    ys[p * C + c] = gam[c] * h + bet[c];
                }
        }
    }
    SAV_DEBUG_CHECK_FINITE(y);

    return g.make(std::move(y), [&](Tensor5<T>& gy_ref) -> std::function<void()> {
        Tensor5<T> gy = gy_ref;
        Tensor5<T> gamv = gamma.value;
        Tensor5<T> gx = g.grad_of(x), gg = g.grad_of(gamma), gb = g.grad_of(beta);
        bool track_x = x.tracked(), track_g = gamma.tracked(), track_b = beta.tracked();
        return [=]() mutable {
            const T* gam_p = gamv.data();
            for (int n = 0; n < N; ++n) {
                const int64_t base = static_cast<int64_t>(n) * S * C;
                const T* gys = gy.data() + base;
                const T* hs = xhat->data() + base;
                for (int gi = 0; gi < groups; ++gi) {
                    const int c0 = gi * Cg;
                    const double is = (*invstd)[static_cast<size_t>(n) * groups + gi];
                    double s1 = 0.0, s2 = 0.0;
                    for (int64_t p = 0; p < S; ++p)
                        for (int cg = 0; cg < Cg; ++cg) {
                            int c = c0 + cg;
                            double dh = static_cast<double>(gys[p * C + c]) * gam_p[c];
                            s1 += dh;
                            s2 += dh * hs[p * C + c];
                        }
                    if (track_x) {
                        T* gxs = gx.data() + base;
                        for (int64_t p = 0; p < S; ++p)
                            for (int cg = 0; cg < Cg; ++cg) {
                                int c = c0 + cg;
                                double dh = static_cast<double>(gys[p * C + c]) * gam_p[c];
                                gxs[p * C + c] += static_cast<T>(is * (dh - s1 / m - hs[p * C + c] * s2 / m));
                            }
                    }
                    if (track_g || track_b) {
                        T* ggp = track_g ? gg.data() : nullptr;
                        T* gbp = track_b ? gb.data() : nullptr;
                        for (int cg = 0; cg < Cg; ++cg) {
                            int c = c0 + cg;
                            double dg = 0.0, db = 0.0;
                            for (int64_t p = 0; p < S; ++p) {
                                double gyv = gys[p * C + c];
                                dg += gyv * hs[p * C + c];
                                db += gyv;
                            }
                            if (ggp) ggp[c] += static_cast<T>(dg);
                            if (gbp) gbp[c] += static_cast<T>(db);
                        }
                    }
                }
            }
        };
    });
}

// ------------------------------------------------------------- batch norm --
// Per-channel statistics over (N,H,W,D). In training mode the batch moments
// normalize and update the running estimates (momentum 0.1, unbiased running
// variance); in eval mode the running estimates normalize and the op is
// linear in x.
template <typename T>
Var<T> batch_norm(Graph<T>& g, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor5<T>& running_mean,
                  Tensor5<T>& running_var, bool training, double momentum = 0.1, double eps = 1e-5) {
    const auto& xv = x.value;
    const int C = static_cast<int>(xv.c());
    const int64_t S = xv.n() * xv.h() * xv.w() * xv.d();
    if (gamma.value.size() != C || beta.value.size() != C || running_mean.size() != C || running_var.size() != C)
        throw std::invalid_argument("batch_norm: per-channel array size mismatch");

    std::vector<double> mu(C), var(C);
    if (training) {
        const T* xp = xv.data();
        std::vector<double> sum(C, 0.0), sq(C, 0.0);
        for (int64_t p = 0; p < S; ++p)
            for (int c = 0; c < C; ++c) {
                double v = xp[p * C + c];
                sum[c] += v;
                sq[c] += v * v;
            }
        for (int c = 0; c < C; ++c) {
            mu[c] = sum[c] / static_cast<double>(S);
            var[c] = std::max(sq[c] / static_cast<double>(S) - mu[c] * mu[c], 0.0);
            double var_unbiased = S > 1 ? var[c] * static_cast<double>(S) / static_cast<double>(S - 1) : var[c];
            running_mean.data()[c] = static_cast<T>((1.0 - momentum) * running_mean.data()[c] + momentum * mu[c]);
            running_var.data()[c] = static_cast<T>((1.0 - momentum) * running_var.data()[c] + momentum * var_unbiased);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mu[c] = running_mean.data()[c];
            var[c] = running_var.data()[c];
        }
    }

    auto invstd = std::make_shared<std::vector<double>>(C);
    for (int c = 0; c < C; ++c) (*invstd)[c] = 1.0 / std::sqrt(var[c] + eps);

    Tensor5<T> y(xv.shape());
    auto xhat = std::make_shared<Tensor5<T>>(xv.shape());
    {
        const T* xp = xv.data();
        T* yp = y.data();
        T* hp = xhat->data();
        const T* gam = gamma.value.data();
        const T* bet = beta.value.data();
        for (int64_t p = 0; p < S; ++p)
            for (int c = 0; c < C; ++c) {
                T h = static_cast<T>((xp[p * C + c] - mu[c]) * (*invstd)[c]);
                hp[p * C + c] = h;
                yp[p * C + c] = gam[c] * h + bet[c];
            }
    }
    SAV_DEBUG_CHECK_FINITE(y);

    return g.make(std::move(y), [&](Tensor5<T>& gy_ref) -> std::function<void()> {
        Tensor5<T> gy = gy_ref;
        Tensor5<T> gamv = gamma.value;
        Tensor5<T> gx = g.grad_of(x), gg = g.grad_of(gamma), gb = g.grad_of(beta);
        bool track_x = x.tracked(), track_g = gamma.tracked(), track_b = beta.tracked();
        return [=]() mutable {
            const T* gam_p = gamv.data();
            const T* gyp = gy.data();
            const T* hp = xhat->data();
            std::vector<double> s1(C, 0.0), s2(C, 0.0);
            for (int64_t p = 0; p < S; ++p)
                for (int c = 0; c < C; ++c) {
                    double dh = static_cast<double>(gyp[p * C + c]) * gam_p[c];
                    s1[c] += dh;
                    s2[c] += dh * hp[p * C + c];
                }
            if (track_x) {
                T* gxp = gx.data();
                const double m = static_cast<double>(S);
                for (int64_t p = 0; p < S; ++p)
                    for (int c = 0; c < C; ++c) {
                        double dh = static_cast<double>(gyp[p * C + c]) * gam_p[c];
                        double d = training ? (*invstd)[c] * (dh - s1[c] / m - hp[p * C + c] * s2[c] / m)
                                            : (*invstd)[c] * dh;
                        gxp[p * C + c] += static_cast<T>(d);
                    }
            }
            if (track_g || track_b) {
                T* ggp = track_g ? gg.data() : nullptr;
                T* gbp = track_b ? gb.data() : nullptr;
                std::vector<double> dg(C, 0.0), db(C, 0.0);
                for (int64_t p = 0; p < S; ++p)
                    for (int c = 0; c < C; ++c) {
                        dg[c] += static_cast<double>(gyp[p * C + c]) * hp[p * C + c];
                        db[c] += gyp[p * C + c];
                    }
                for (int c = 0; c < C; ++c) {
                    if (ggp) ggp[c] += static_cast<T>(dg[c]);
                    if (gbp) gbp[c] += static_cast<T>(db[c]);
                }
            }
        };
    });
}

// ----------------------------------------------------------- pointwise ops --
template <typename T>
Var<T> relu(Graph<T>& g, const Var<T>& x) {
    Tensor5<T> y(x.value.shape());
    const T* xp = x.value.data();
    T* yp = y.data();
    for (int64_t i = 0; i < y.size(); ++i) yp[i] = xp[i] > T(0) ? xp[i] : T(0);

    Tensor5<T> yref = y;  // shared
    return g.make(std::move(y), [&](Tensor5<T>& gy_ref) -> std::function<void()> {
        if (!x.tracked()) return nullptr;
        Tensor5<T> gy = gy_ref;
        Tensor5<T> gx = g.grad_of(x);
        return [=]() mutable {
            const T* yp2 = yref.data();
            const T* gyp = gy.data();
            T* gxp = gx.data();
            for (int64_t i = 0; i < gy.size(); ++i)
                if (yp2[i] > T(0)) gxp[i] += gyp[i];
        };
    });
}

template <typename T>
Var<T> sigmoid(Graph<T>& g, const Var<T>& x) {
    Tensor5<T> y(x.value.shape());
    const T* xp = x.value.data();
    T* yp = y.data();
    for (int64_t i = 0; i < y.size(); ++i) {
        double v = xp[i];
        yp[i] = static_cast<T>(v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)));
    }

    Tensor5<T> yref = y;
    return g.make(std::move(y), [&](Tensor5<T>& gy_ref) -> std::function<void()> {
        if (!x.tracked()) return nullptr;
        Tensor5<T> gy = gy_ref;
        Tensor5<T> gx = g.grad_of(x);
        return [=]() mutable {
            const T* yp2 = yref.data();
            const T* gyp = gy.data();
            T* gxp = gx.data();
            for (int64_t i = 0; i < gy.size(); ++i) gxp[i] += gyp[i] * yp2[i] * (T(1) - yp2[i]);
        };
    });
}

// Channel-wise average and max pooling: (N,H,W,D,C) -> (N,H,W,D,1).
template <typename T>
Var<T> channel_mean(Graph<T>& g, const Var<T>& x) {
    const auto& xv = x.value;
    const int C = static_cast<int>(xv.c());
    const int64_t S = xv.n() * xv.h() * xv.w() * xv.d();
    Tensor5<T> y(xv.n(), xv.h(), xv.w(), xv.d(), 1);
    const T* xp = xv.data();
    T* yp = y.data();
    for (int64_t p = 0; p < S; ++p) {
        T acc = T(0);
        for (int c = 0; c < C; ++c) acc += xp[p * C + c];
        yp[p] = acc / static_cast<T>(C);
    }

    return g.make(std::move(y), [&](Tensor5<T>& gy_ref) -> std::function<void()> {
        if (!x.tracked()) return nullptr;
        Tensor5<T> gy = gy_ref;
        Tensor5<T> gx = g.grad_of(x);
        return [=]() mutable {
            const T* gyp = gy.data();
            T* gxp = gx.data();
            for (int64_t p = 0; p < S; ++p) {
                T d = gyp[p] / static_cast<T>(C);
                for (int c = 0; c < C; ++c) gxp[p * C + c] += d;
            }
        };
    });
}

template <typename T>
Var<T> channel_max(Graph<T>& g, const Var<T>& x) {
    const auto& xv = x.value;
    const int C = static_cast<int>(xv.c());
    const int64_t S = xv.n() * xv.h() * xv.w() * xv.d();
    Tensor5<T> y(xv.n(), xv.h(), xv.w(), xv.d(), 1);
    auto arg = std::make_shared<std::vector<int32_t>>(S);
    const T* xp = xv.data();
    T* yp = y.data();
    for (int64_t p = 0; p < S; ++p) {
        T best = xp[p * C];
        int32_t at = 0;
        for (int c = 1; c < C; ++c)
            if (xp[p * C + c] > best) {
                best = xp[p * C + c];
                at = c;
            }
        yp[p] = best;
        (*arg)[p] = at;
    }

    return g.make(std::move(y), [&](Tensor5<T>& gy_ref) -> std::function<void()> {
        if (!x.tracked()) return nullptr;
        Tensor5<T> gy = gy_ref;
        Tensor5<T> gx = g.grad_of(x);
        return [=]() mutable {
            const T* gyp = gy.data();
            T* gxp = gx.data();
            for (int64_t p = 0; p < S; ++p) gxp[p * C + (*arg)[p]] += gyp[p];
        };
    });
}

// Concatenate along the channel axis.
template <typename T>
Var<T> concat_c(Graph<T>& g, const Var<T>& a, const Var<T>& b) {
    const auto& av = a.value;
    const auto& bv = b.value;
    if (av.n() != bv.n() || av.h() != bv.h() || av.w() != bv.w() || av.d() != bv.d())
        throw std::invalid_argument("concat_c: spatial shape mismatch");
    const int Ca = static_cast<int>(av.c()), Cb = static_cast<int>(bv.c());
    const int64_t S = av.n() * av.h() * av.w() * av.d();
    Tensor5<T> y(av.n(), av.h(), av.w(), av.d(), Ca + Cb);
    const T* ap = av.data();
    const T* bp = bv.data();
    T* yp = y.data();
    for (int64_t p = 0; p < S; ++p) {
        for (int c = 0; c < Ca; ++c) yp[p * (Ca + Cb) + c] = ap[p * Ca + c];
        for (int c = 0; c < Cb; ++c) yp[p * (Ca + Cb) + Ca + c] = bp[p * Cb + c];
    }

    return g.make(std::move(y), [&](Tensor5<T>& gy_ref) -> std::function<void()> {
        if (!a.tracked() && !b.tracked()) return nullptr;
        Tensor5<T> gy = gy_ref;
        Tensor5<T> ga = g.grad_of(a), gb = g.grad_of(b);
        bool ta = a.tracked(), tb = b.tracked();
        return [=]() mutable {
            const T* gyp = gy.data();
            for (int64_t p = 0; p < S; ++p) {
                if (ta) {
                    T* gap = ga.data();
                    for (int c = 0; c < Ca; ++c) gap[p * Ca + c] += gyp[p * (Ca + Cb) + c];
                }
                if (tb) {
                    T* gbp = gb.data();
                    for (int c = 0; c < Cb; ++c) gbp[p * Cb + c] += gyp[p * (Ca + Cb) + Ca + c];
                }
            }
        };
    });
}

// Elementwise product of a feature map with a single-channel gate map,
// broadcast over channels: y[...,c] = f[...,c] * m[...,0].
template <typename T>
Var<T> mul_broadcast(Graph<T>& g, const Var<T>& f, const Var<T>& m) {
    const auto& fv = f.value;
    const auto& mv = m.value;
    if (mv.c() != 1) throw std::invalid_argument("mul_broadcast: gate must have one channel");
    if (fv.n() != mv.n() || fv.h() != mv.h() || fv.w() != mv.w() || fv.d() != mv.d())
        throw std::invalid_argument("mul_broadcast: spatial shape mismatch");
    const int C = static_cast<int>(fv.c());
    const int64_t S = fv.n() * fv.h() * fv.w() * fv.d();
    Tensor5<T> y(fv.shape());
    const T* fp = fv.data();
    const T* mp = mv.data();
    T* yp = y.data();
    for (int64_t p = 0; p < S; ++p) {
        T gate = mp[p];
        for (int c = 0; c < C; ++c) yp[p * C + c] = fp[p * C + c] * gate;
    }

    return g.make(std::move(y), [&](Tensor5<T>& gy_ref) -> std::function<void()> {
        Tensor5<T> gy = gy_ref;
        Tensor5<T> fval = fv, mval = mv;
        Tensor5<T> gf = g.grad_of(f), gm = g.grad_of(m);
        bool tf = f.tracked(), tm = m.tracked();
        return [=]() mutable {
            const T* gyp = gy.data();
            const T* fp2 = fval.data();
            const T* mp2 = mval.data();
            for (int64_t p = 0; p < S; ++p) {
                if (tf) {
                    T* gfp = gf.data();
                    T gate = mp2[p];
                    for (int c = 0; c < C; ++c) gfp[p * C + c] += gyp[p * C + c] * gate;
                }
                if (tm) {
                    T acc = T(0);
                    for (int c = 0; c < C; ++c) acc += gyp[p * C + c] * fp2[p * C + c];
                    gm.data()[p] += acc;
                }
            }
        };
    });
}

}  // namespace sav
