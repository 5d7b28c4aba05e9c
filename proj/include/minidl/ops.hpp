#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "minidl/graph.hpp"
#include "minidl/kernels.hpp"
#include "minidl/rng.hpp"
#include "minidl/tensor.hpp"

// Differentiable tensor ops. Each op validates shapes, computes the forward
// value, checks it for NaN/Inf (a non-finite forward result is an error
// state), and records a backward closure on the tape when any input needs a
// gradient. Backward closures read the output gradient and accumulate into
// the input gradients, skipping inputs that do not need one.

namespace minidl {

namespace detail {

template <class S>
inline Graph<S>& same_graph(Var<S> a, Var<S> b) {
    if (a.graph != b.graph) throw GraphError("operands belong to different graphs");
    return *a.graph;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
    Graph<S>& g = detail::same_graph(a, b);
    if (a.shape() != b.shape())
        throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::int64_t n = a.size();
    Tensor<S> out(a.shape());
    const S* pa = a.value().data();
    const S* pb = b.value().data();
    S* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    kernels::ensure_finite(po, n, "add");

    const bool needs = g.needs_grad(a.id) || g.needs_grad(b.id);
    const int aid = a.id, bid = b.id, out_id = g.size();
    return g.make(std::move(out), needs, [aid, bid, out_id, n](Graph<S>& gr) {
        const S* go = gr.grad(out_id);
        if (gr.needs_grad(aid)) {
            S* ga = gr.grad(aid);
            for (std::int64_t i = 0; i < n; ++i) ga[i] += go[i];
        }
        if (gr.needs_grad(bid)) {
            S* gb = gr.grad(bid);
            for (std::int64_t i = 0; i < n; ++i) gb[i] += go[i];
        }
    });
}

namespace detail {

// Shared scaffolding for shape-preserving elementwise ops.
// fwd: S -> S; bwd(x, y): local derivative dy/dx from input and output.
template <class S, class Fwd, class Bwd>
Var<S> elementwise(Var<S> x, const char* name, Fwd fwd, Bwd bwd) {
    Graph<S>& g = *x.graph;
    const std::int64_t n = x.size();
    Tensor<S> out(x.shape());
    const S* px = x.value().data();
    S* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
    kernels::ensure_finite(po, n, name);

    const int xid = x.id, out_id = g.size();
    return g.make(std::move(out), g.needs_grad(xid), [xid, out_id, n, bwd](Graph<S>& gr) {
        if (!gr.needs_grad(xid)) return;
        const S* go = gr.grad(out_id);
        const S* px = gr.value(xid).data();
        const S* py = gr.value(out_id).data();
        S* gx = gr.grad(xid);
        for (std::int64_t i = 0; i < n; ++i) gx[i] += go[i] * bwd(px[i], py[i]);
    });
}

}  // namespace detail

template <class S>
Var<S> relu(Var<S> x) {
    return detail::elementwise(
        x, "relu", [](S v) { return v > S(0) ? v : S(0); },
        [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <class S>
Var<S> leaky_relu(Var<S> x, S slope = S(0.2)) {
    if (!(slope > S(0) && slope < S(1))) throw DomainError("leaky_relu: slope must be in (0,1)");
    return detail::elementwise(
        x, "leaky_relu", [slope](S v) { return v > S(0) ? v : slope * v; },
        [slope](S v, S) { return v > S(0) ? S(1) : slope; });
}

template <class S>
Var<S> sigmoid(Var<S> x) {
    return detail::elementwise(
        x, "sigmoid", [](S v) { return S(1) / (S(1) + std::exp(-v)); },
        [](S, S y) { return y * (S(1) - y); });
}

template <class S>
Var<S> tanh_act(Var<S> x) {
    return detail::elementwise(
        x, "tanh", [](S v) { return std::tanh(v); }, [](S, S y) { return S(1) - y * y; });
}

enum class ActKind { Relu, LeakyRelu, Sigmoid, Tanh };

template <class S>
Var<S> activation(ActKind kind, Var<S> x, S slope = S(0.2)) {
    switch (kind) {
        case ActKind::Relu: return relu(x);
        case ActKind::LeakyRelu: return leaky_relu(x, slope);
        case ActKind::Sigmoid: return sigmoid(x);
        case ActKind::Tanh: return tanh_act(x);
    }
    throw DomainError("unknown activation kind");
}

// ---------------------------------------------------------------------------
// Shape ops

// Same data viewed under new extents; gradient passes through unchanged.
template <class S>
Var<S> reshape(Var<S> x, Shape shape) {
    Graph<S>& g = *x.graph;
    Tensor<S> out = x.value().reshaped(std::move(shape));  // throws ShapeError on mismatch
    const std::int64_t n = x.size();
    const int xid = x.id, out_id = g.size();
    return g.make(std::move(out), g.needs_grad(xid), [xid, out_id, n](Graph<S>& gr) {
        if (!gr.needs_grad(xid)) return;
        const S* go = gr.grad(out_id);
        S* gx = gr.grad(xid);
        for (std::int64_t i = 0; i < n; ++i) gx[i] += go[i];
    });
}

// [N, d1, d2, ...] -> [N, d1*d2*...], row-major per sample.
template <class S>
Var<S> flatten(Var<S> x) {
    if (x.value().ndim() < 2) throw ShapeError("flatten expects at least 2 dimensions");
    const Shape& s = x.shape();
    int rest = 1;
    for (std::size_t i = 1; i < s.size(); ++i) rest *= s[i];
    return reshape(x, Shape{s[0], rest});
}

// Scalar dot of x with a constant weight tensor of the same shape.
template <class S>
Var<S> weighted_sum(Var<S> x, const Tensor<S>& weights) {
    Graph<S>& g = *x.graph;
    if (x.shape() != weights.shape())
        throw ShapeError("weighted_sum: " + shape_str(x.shape()) + " vs " +
                         shape_str(weights.shape()));
    const std::int64_t n = x.size();
    const S* px = x.value().data();
    const S* pw = weights.data();
    S acc = S(0);
    for (std::int64_t i = 0; i < n; ++i) acc += px[i] * pw[i];
    Tensor<S> out = Tensor<S>::scalar(acc);
    kernels::ensure_finite(out.data(), 1, "weighted_sum");

    Tensor<S> w = weights;  // shares the buffer
    const int xid = x.id, out_id = g.size();
    return g.make(std::move(out), g.needs_grad(xid), [xid, out_id, n, w](Graph<S>& gr) {
        if (!gr.needs_grad(xid)) return;
        const S g0 = gr.grad(out_id)[0];
        const S* pw = w.data();
        S* gx = gr.grad(xid);
        for (std::int64_t i = 0; i < n; ++i) gx[i] += g0 * pw[i];
    });
}

// Picks one element as a scalar node (used to take d(logit)/d(...)).
template <class S>
Var<S> index_scalar(Var<S> x, std::int64_t flat_index) {
    Graph<S>& g = *x.graph;
    if (flat_index < 0 || flat_index >= x.size())
        throw IndexError("index_scalar: " + std::to_string(flat_index) + " out of 0.." +
                         std::to_string(x.size() - 1));
    Tensor<S> out = Tensor<S>::scalar(x.value()[flat_index]);
    const int xid = x.id, out_id = g.size();
    return g.make(std::move(out), g.needs_grad(xid), [xid, out_id, flat_index](Graph<S>& gr) {
        if (!gr.needs_grad(xid)) return;
        gr.grad(xid)[flat_index] += gr.grad(out_id)[0];
    });
}

// ---------------------------------------------------------------------------
// Linear

// Affine map x[N,F] * w[F,O] + b[O].
template <class S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> b) {
    Graph<S>& gg = *x.graph;
    if (w.graph != &gg || b.graph != &gg) throw GraphError("operands belong to different graphs");
    if (x.value().ndim() != 2 || w.value().ndim() != 2 || b.value().ndim() != 1)
        throw ShapeError("linear expects x[N,F], w[F,O], b[O]");
    const int n = x.shape()[0], f = x.shape()[1];
    const int fw = w.shape()[0], o = w.shape()[1];
    if (f != fw || b.shape()[0] != o)
        throw ShapeError("linear: x" + shape_str(x.shape()) + " w" + shape_str(w.shape()) + " b" +
                         shape_str(b.shape()));

    Tensor<S> out({n, o});
    kernels::matmul_nn(x.value().data(), w.value().data(), out.data(), n, f, o);
    const S* pb = b.value().data();
    S* po = out.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < o; ++j) po[static_cast<std::int64_t>(i) * o + j] += pb[j];
    kernels::ensure_finite(po, out.size(), "linear");

    const bool needs = gg.needs_grad(x.id) || gg.needs_grad(w.id) || gg.needs_grad(b.id);
    const int xid = x.id, wid = w.id, bid = b.id, out_id = gg.size();
    return gg.make(std::move(out), needs, [xid, wid, bid, out_id, n, f, o](Graph<S>& gr) {
        const S* go = gr.grad(out_id);
        if (gr.needs_grad(xid))  // dx = dy * w^T
            kernels::matmul_nt(go, gr.value(wid).data(), gr.grad(xid), n, o, f, true);
        if (gr.needs_grad(wid))  // dw = x^T * dy
            kernels::matmul_tn(gr.value(xid).data(), go, gr.grad(wid), f, n, o, true);
        if (gr.needs_grad(bid)) {
            S* gb = gr.grad(bid);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < o; ++j) gb[j] += go[static_cast<std::int64_t>(i) * o + j];
        }
    });
}

// ---------------------------------------------------------------------------
// Convolutions

// Cross-correlation (no kernel flip) of x[N,Cin,H,W] with w[Cout,Cin,kH,kW],
// plus bias. H' = (H + 2*pad - kH)/stride + 1.
template <class S>
Var<S> conv2d(Var<S> x, Var<S> w, Var<S> b, int stride = 1, int pad = 0) {
    Graph<S>& g = *x.graph;
    if (w.graph != &g || b.graph != &g) throw GraphError("operands belong to different graphs");
    if (x.value().ndim() != 4 || w.value().ndim() != 4 || b.value().ndim() != 1)
        throw ShapeError("conv2d expects x[N,Cin,H,W], w[Cout,Cin,kH,kW], b[Cout]");
    if (stride < 1) throw DomainError("conv2d: stride must be >= 1");
    if (pad < 0) throw DomainError("conv2d: pad must be >= 0");
    const int n = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
    const int cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != cin)
        throw ShapeError("conv2d: input channels " + std::to_string(cin) + " vs weight " +
                         std::to_string(w.shape()[1]));
    if (b.shape()[0] != cout) throw ShapeError("conv2d: bias size mismatch");
    if (h + 2 * pad < kh || wd + 2 * pad < kw)
        throw ShapeError("conv2d: kernel larger than padded input");

    const int oh = kernels::conv_out_extent(h, kh, stride, pad);
    const int ow = kernels::conv_out_extent(wd, kw, stride, pad);
    const int k = cin * kh * kw;
    const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;

    Tensor<S> out({n, cout, oh, ow});
    std::vector<S> cols(static_cast<std::size_t>(k) * ohw);
    const S* px = x.value().data();
    const S* pw = w.value().data();
    const S* pb = b.value().data();
    for (int i = 0; i < n; ++i) {
        kernels::im2col(px + static_cast<std::int64_t>(i) * cin * h * wd, cin, h, wd, kh, kw,
                        stride, pad, cols.data(), oh, ow);
        S* po = out.data() + static_cast<std::int64_t>(i) * cout * ohw;
        kernels::matmul_nn(pw, cols.data(), po, cout, k, static_cast<int>(ohw));
        for (int c = 0; c < cout; ++c)
            for (std::int64_t j = 0; j < ohw; ++j) po[c * ohw + j] += pb[c];
    }
    kernels::ensure_finite(out.data(), out.size(), "conv2d");

    const bool needs = g.needs_grad(x.id) || g.needs_grad(w.id) || g.needs_grad(b.id);
    const int xid = x.id, wid = w.id, bid = b.id, out_id = g.size();
    auto back = [xid, wid, bid, out_id, n, cin, h, wd, cout, kh, kw, stride, pad, oh, ow,
                 k](Graph<S>& gr) {
        const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;
        const S* go = gr.grad(out_id);
        const S* px = gr.value(xid).data();
        const S* pw = gr.value(wid).data();
        const bool need_x = gr.needs_grad(xid);
        const bool need_w = gr.needs_grad(wid);
        const bool need_b = gr.needs_grad(bid);
        std::vector<S> cols(need_w ? static_cast<std::size_t>(k) * ohw : 0);
        std::vector<S> dcols(need_x ? static_cast<std::size_t>(k) * ohw : 0);
        for (int i = 0; i < n; ++i) {
            const S* gout = go + static_cast<std::int64_t>(i) * cout * ohw;
            if (need_w) {
                kernels::im2col(px + static_cast<std::int64_t>(i) * cin * h * wd, cin, h, wd, kh,
                                kw, stride, pad, cols.data(), oh, ow);
                kernels::matmul_nt(gout, cols.data(), gr.grad(wid), cout, static_cast<int>(ohw), k,
                                   true);
            }
            if (need_x) {
                kernels::matmul_tn(pw, gout, dcols.data(), k, cout, static_cast<int>(ohw));
                kernels::col2im(dcols.data(), cin, h, wd, kh, kw, stride, pad,
                                gr.grad(xid) + static_cast<std::int64_t>(i) * cin * h * wd, oh, ow);
            }
            if (need_b) {
                S* gb = gr.grad(bid);
                for (int c = 0; c < cout; ++c) {
                    S acc = S(0);
                    for (std::int64_t j = 0; j < ohw; ++j) acc += gout[c * ohw + j];
                    gb[c] += acc;
                }
            }
        }
    };
    return g.make(std::move(out), needs, std::move(back));
}

// Adjoint of conv2d with the same (stride, pad): x[N,Cin,H,W] with
// w[Cin,Cout,kH,kW] -> [N,Cout,H',W'], H' = (H-1)*stride - 2*pad + kH.
template <class S>
Var<S> conv_transpose2d(Var<S> x, Var<S> w, Var<S> b, int stride = 1, int pad = 0) {
    Graph<S>& g = *x.graph;
    if (w.graph != &g || b.graph != &g) throw GraphError("operands belong to different graphs");
    if (x.value().ndim() != 4 || w.value().ndim() != 4 || b.value().ndim() != 1)
        throw ShapeError("conv_transpose2d expects x[N,Cin,H,W], w[Cin,Cout,kH,kW], b[Cout]");
    if (stride < 1) throw DomainError("conv_transpose2d: stride must be >= 1");
    if (pad < 0) throw DomainError("conv_transpose2d: pad must be >= 0");
    const int n = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
    const int cout = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[0] != cin)
        throw ShapeError("conv_transpose2d: input channels " + std::to_string(cin) +
                         " vs weight " + std::to_string(w.shape()[0]));
    if (b.shape()[0] != cout) throw ShapeError("conv_transpose2d: bias size mismatch");
    const int oh = (h - 1) * stride - 2 * pad + kh;
    const int ow = (wd - 1) * stride - 2 * pad + kw;
    if (oh < 1 || ow < 1) throw ShapeError("conv_transpose2d: output would be empty");

    const int k = cout * kh * kw;  // column rows are over the *output* channels
    const std::int64_t hw = static_cast<std::int64_t>(h) * wd;
    Tensor<S> out({n, cout, oh, ow});
    std::vector<S> cols(static_cast<std::size_t>(k) * hw);
    const S* px = x.value().data();
    const S* pw = w.value().data();
    const S* pb = b.value().data();
    for (int i = 0; i < n; ++i) {
        // cols[k x HW] = w^T[(Cout*kh*kw) x Cin] * x_i[Cin x HW]
        kernels::matmul_tn(pw, px + static_cast<std::int64_t>(i) * cin * hw, cols.data(), k, cin,
                           static_cast<int>(hw));
        S* po = out.data() + static_cast<std::int64_t>(i) * cout * oh * ow;
        kernels::col2im(cols.data(), cout, oh, ow, kh, kw, stride, pad, po, h, wd);
        for (int c = 0; c < cout; ++c)
            for (std::int64_t j = 0; j < static_cast<std::int64_t>(oh) * ow; ++j)
                po[c * static_cast<std::int64_t>(oh) * ow + j] += pb[c];
    }
    kernels::ensure_finite(out.data(), out.size(), "conv_transpose2d");

    const bool needs = g.needs_grad(x.id) || g.needs_grad(w.id) || g.needs_grad(b.id);
    const int xid = x.id, wid = w.id, bid = b.id, out_id = g.size();
    auto back = [xid, wid, bid, out_id, n, cin, h, wd, cout, kh, kw, stride, pad, oh, ow,
                 k](Graph<S>& gr) {
        const std::int64_t hw = static_cast<std::int64_t>(h) * wd;
        const std::int64_t oo = static_cast<std::int64_t>(oh) * ow;
        const S* go = gr.grad(out_id);
        const S* px = gr.value(xid).data();
        const S* pw = gr.value(wid).data();
        const bool need_x = gr.needs_grad(xid);
        const bool need_w = gr.needs_grad(wid);
        const bool need_b = gr.needs_grad(bid);
        std::vector<S> dcols((need_x || need_w) ? static_cast<std::size_t>(k) * hw : 0);
        for (int i = 0; i < n; ++i) {
            const S* gout = go + static_cast<std::int64_t>(i) * cout * oo;
            if (need_x || need_w)
                kernels::im2col(gout, cout, oh, ow, kh, kw, stride, pad, dcols.data(),
                                h, wd);
            if (need_x)  // dx_i = w[Cin x k] * dcols[k x HW]
                kernels::matmul_nn(pw, dcols.data(), gr.grad(xid) + static_cast<std::int64_t>(i) * cin * hw,
                                   cin, k, static_cast<int>(hw), true);
            if (need_w)  // dw = x_i[Cin x HW] * dcols^T
                kernels::matmul_nt(px + static_cast<std::int64_t>(i) * cin * hw, dcols.data(),
                                   gr.grad(wid), cin, static_cast<int>(hw), k, true);
            if (need_b) {
                S* gb = gr.grad(bid);
                for (int c = 0; c < cout; ++c) {
                    S acc = S(0);
                    for (std::int64_t j = 0; j < oo; ++j) acc += gout[c * oo + j];
                    gb[c] += acc;
                }
            }
        }
    };
    return g.make(std::move(out), needs, std::move(back));
}

// ---------------------------------------------------------------------------
// Pooling

// Max over k*k windows; the gradient routes entirely to the argmax cell
// (first occurrence in row-major window order on ties).
template <class S>
Var<S> maxpool2d(Var<S> x, int k, int stride) {
    Graph<S>& g = *x.graph;
    if (x.value().ndim() != 4) throw ShapeError("maxpool2d expects x[N,C,H,W]");
    if (stride < 1) throw DomainError("maxpool2d: stride must be >= 1");
    if (k < 1) throw DomainError("maxpool2d: kernel must be >= 1");
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (k > h || k > w) throw ShapeError("maxpool2d: window larger than input");
    const int oh = (h - k) / stride + 1;
    const int ow = (w - k) / stride + 1;

    Tensor<S> out({n, c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
    const S* px = x.value().data();
    S* po = out.data();
    std::int64_t oi = 0;
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            const S* plane = px + (static_cast<std::int64_t>(i) * c + ch) * h * w;
            const std::int64_t plane_off = (static_cast<std::int64_t>(i) * c + ch) * h * w;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox, ++oi) {
                    const int y0 = oy * stride, x0 = ox * stride;
                    S best = plane[static_cast<std::int64_t>(y0) * w + x0];
                    std::int64_t best_at = static_cast<std::int64_t>(y0) * w + x0;
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) {
                            const std::int64_t at = static_cast<std::int64_t>(y0 + dy) * w + x0 + dx;
                            if (plane[at] > best) {
                                best = plane[at];
                                best_at = at;
                            }
                        }
                    po[oi] = best;
                    (*argmax)[oi] = plane_off + best_at;
                }
            }
        }
    }
    kernels::ensure_finite(po, out.size(), "maxpool2d");

    const int xid = x.id, out_id = g.size();
    const std::int64_t total = out.size();
    return g.make(std::move(out), g.needs_grad(xid), [xid, out_id, argmax, total](Graph<S>& gr) {
        if (!gr.needs_grad(xid)) return;
        const S* go = gr.grad(out_id);
        S* gx = gr.grad(xid);
        for (std::int64_t i = 0; i < total; ++i) gx[(*argmax)[i]] += go[i];
    });
}

// ---------------------------------------------------------------------------
// Batch normalization

template <class S>
struct BatchNormState {
    Tensor<S> running_mean;  // [C]
    Tensor<S> running_var;   // [C]

    explicit BatchNormState(int channels = 0)
        : running_mean(channels > 0 ? Tensor<S>({channels}) : Tensor<S>()),
          running_var(channels > 0 ? Tensor<S>::ones({channels}) : Tensor<S>()) {}
};

// Per-channel normalization of x[N,C,H,W]. Train mode uses (biased) batch
// statistics and folds them into the running stats with the given momentum;
// eval mode normalizes with the running stats.
template <class S>
Var<S> batchnorm2d(Var<S> x, Var<S> gamma, Var<S> beta, BatchNormState<S>& state, S eps,
                   S momentum, bool training) {
    Graph<S>& g = *x.graph;
    if (gamma.graph != &g || beta.graph != &g)
        throw GraphError("operands belong to different graphs");
    if (x.value().ndim() != 4) throw ShapeError("batchnorm2d expects x[N,C,H,W]");
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c} ||
        state.running_mean.shape() != Shape{c} || state.running_var.shape() != Shape{c})
        throw ShapeError("batchnorm2d: channel mismatch (C=" + std::to_string(c) + ")");
    if (!(eps > S(0))) throw DomainError("batchnorm2d: eps must be > 0");
    if (momentum < S(0) || momentum > S(1))
        throw DomainError("batchnorm2d: momentum must be in [0,1]");

    const std::int64_t m = static_cast<std::int64_t>(n) * h * w;  // elements per channel
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    auto mean = std::make_shared<std::vector<S>>(c);
    auto inv_std = std::make_shared<std::vector<S>>(c);
    const S* px = x.value().data();

    for (int ch = 0; ch < c; ++ch) {
        S mu, var;
        if (training) {
            S acc = S(0);
            for (int i = 0; i < n; ++i) {
                const S* p = px + (static_cast<std::int64_t>(i) * c + ch) * hw;
                for (std::int64_t j = 0; j < hw; ++j) acc += p[j];
            }
            mu = acc / static_cast<S>(m);
            S vacc = S(0);
            for (int i = 0; i < n; ++i) {
                const S* p = px + (static_cast<std::int64_t>(i) * c + ch) * hw;
                for (std::int64_t j = 0; j < hw; ++j) {
                    const S d = p[j] - mu;
                    vacc += d * d;
                }
            }
            var = vacc / static_cast<S>(m);
            state.running_mean[ch] = (S(1) - momentum) * state.running_mean[ch] + momentum * mu;
            state.running_var[ch] = (S(1) - momentum) * state.running_var[ch] + momentum * var;
        } else {
            mu = state.running_mean[ch];
            var = state.running_var[ch];
        }
        (*mean)[ch] = mu;
        (*inv_std)[ch] = S(1) / std::sqrt(var + eps);
    }

    Tensor<S> out(x.shape());
    S* po = out.data();
    const S* pg = gamma.value().data();
    const S* pbt = beta.value().data();
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            const S* p = px + (static_cast<std::int64_t>(i) * c + ch) * hw;
            S* q = po + (static_cast<std::int64_t>(i) * c + ch) * hw;
            const S mu = (*mean)[ch], is = (*inv_std)[ch], ga = pg[ch], be = pbt[ch];
            for (std::int64_t j = 0; j < hw; ++j) q[j] = ga * (p[j] - mu) * is + be;
        }
    kernels::ensure_finite(po, out.size(), "batchnorm2d");

    const bool needs = g.needs_grad(x.id) || g.needs_grad(gamma.id) || g.needs_grad(beta.id);
    const int xid = x.id, gid = gamma.id, bid = beta.id, out_id = g.size();
    auto back = [xid, gid, bid, out_id, n, c, hw, m, mean, inv_std, training](Graph<S>& gr) {
        const S* go = gr.grad(out_id);
        const S* px = gr.value(xid).data();
        const S* pg = gr.value(gid).data();
        const bool need_x = gr.needs_grad(xid);
        const bool need_g = gr.needs_grad(gid);
        const bool need_b = gr.needs_grad(bid);
        for (int ch = 0; ch < c; ++ch) {
            const S mu = (*mean)[ch], is = (*inv_std)[ch];
            // Channel-wise sums of dy and dy*xhat.
            S sum_dy = S(0), sum_dy_xhat = S(0);
            for (int i = 0; i < n; ++i) {
                const std::int64_t off = (static_cast<std::int64_t>(i) * c + ch) * hw;
                for (std::int64_t j = 0; j < hw; ++j) {
                    const S dy = go[off + j];
                    sum_dy += dy;
                    sum_dy_xhat += dy * (px[off + j] - mu) * is;
                }
            }
            if (need_g) gr.grad(gid)[ch] += sum_dy_xhat;
            if (need_b) gr.grad(bid)[ch] += sum_dy;
            if (need_x) {
                S* gx = gr.grad(xid);
                const S ga = pg[ch];
                if (training) {
                    const S inv_m = S(1) / static_cast<S>(m);
                    for (int i = 0; i < n; ++i) {
                        const std::int64_t off = (static_cast<std::int64_t>(i) * c + ch) * hw;
                        for (std::int64_t j = 0; j < hw; ++j) {
                            const S xhat = (px[off + j] - mu) * is;
                            gx[off + j] += ga * is *
                                           (go[off + j] - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m);
                        }
                    }
                } else {
                    for (int i = 0; i < n; ++i) {
                        const std::int64_t off = (static_cast<std::int64_t>(i) * c + ch) * hw;
                        for (std::int64_t j = 0; j < hw; ++j) gx[off + j] += go[off + j] * ga * is;
                    }
                }
            }
        }
    };
    return g.make(std::move(out), needs, std::move(back));
}

// ---------------------------------------------------------------------------
// Dropout

// Inverted dropout: train mode zeroes each element with probability p and
// scales survivors by 1/(1-p); eval mode (and p == 0) is the identity and
// consumes no randomness.
template <class S>
Var<S> dropout(Var<S> x, double p, bool training, Rng* rng) {
    if (p < 0.0 || p >= 1.0) throw DomainError("dropout: p must be in [0,1)");
    if (!training || p == 0.0) return x;
    if (rng == nullptr) throw DomainError("dropout: train mode requires an Rng");
    Graph<S>& g = *x.graph;
    const std::int64_t n = x.size();
    const S scale = S(1.0 / (1.0 - p));
    auto mask = std::make_shared<std::vector<S>>(n);  // 0 or 1/(1-p)
    Tensor<S> out(x.shape());
    const S* px = x.value().data();
    S* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) {
        const S mv = rng->bernoulli(p) ? S(0) : scale;
        (*mask)[i] = mv;
        po[i] = px[i] * mv;
    }
    kernels::ensure_finite(po, n, "dropout");

    const int xid = x.id, out_id = g.size();
    return g.make(std::move(out), g.needs_grad(xid), [xid, out_id, n, mask](Graph<S>& gr) {
        if (!gr.needs_grad(xid)) return;
        const S* go = gr.grad(out_id);
        S* gx = gr.grad(xid);
        for (std::int64_t i = 0; i < n; ++i) gx[i] += go[i] * (*mask)[i];
    });
}

// ---------------------------------------------------------------------------
// Losses

// Mean over the batch of -log softmax(logits)[target], computed via
// log-sum-exp with max subtraction.
template <class S>
Var<S> softmax_cross_entropy(Var<S> logits, const std::vector<int>& targets) {
    Graph<S>& g = *logits.graph;
    if (logits.value().ndim() != 2) throw ShapeError("softmax_cross_entropy expects logits[N,K]");
    const int n = logits.shape()[0], k = logits.shape()[1];
    if (static_cast<int>(targets.size()) != n)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for batch of " + std::to_string(n));
    for (int t : targets)
        if (t < 0 || t >= k)
            throw IndexError("softmax_cross_entropy: target " + std::to_string(t) +
                             " out of 0.." + std::to_string(k - 1));

    auto probs = std::make_shared<std::vector<S>>(static_cast<std::size_t>(n) * k);
    const S* pl = logits.value().data();
    S loss = S(0);
    for (int i = 0; i < n; ++i) {
        const S* row = pl + static_cast<std::int64_t>(i) * k;
        S mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        S denom = S(0);
        for (int j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
        const S lse = mx + std::log(denom);
        for (int j = 0; j < k; ++j)
            (*probs)[static_cast<std::int64_t>(i) * k + j] = std::exp(row[j] - mx) / denom;
        loss += lse - row[targets[static_cast<std::size_t>(i)]];
    }
    loss /= static_cast<S>(n);
    Tensor<S> out = Tensor<S>::scalar(loss);
    kernels::ensure_finite(out.data(), 1, "softmax_cross_entropy");

    auto tgt = std::make_shared<std::vector<int>>(targets);
    const int lid = logits.id, out_id = g.size();
    return g.make(std::move(out), g.needs_grad(lid), [lid, out_id, n, k, probs, tgt](Graph<S>& gr) {
        if (!gr.needs_grad(lid)) return;
        const S g0 = gr.grad(out_id)[0] / static_cast<S>(n);
        S* gl = gr.grad(lid);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j) {
                const S onehot = (j == (*tgt)[static_cast<std::size_t>(i)]) ? S(1) : S(0);
                gl[static_cast<std::int64_t>(i) * k + j] +=
                    g0 * ((*probs)[static_cast<std::int64_t>(i) * k + j] - onehot);
            }
    });
}

// Mean of -(y*log p + (1-y)*log(1-p)) with p clamped to [1e-7, 1-1e-7]
// before the logs, so the loss is finite for all p in [0,1]. Targets y are
// {0,1} constants. Gradient is exactly that of the clamped composite (zero
// where the clamp is active).
template <class S>
Var<S> bce_loss(Var<S> p, const Tensor<S>& y) {
    Graph<S>& g = *p.graph;
    if (p.shape() != y.shape())
        throw ShapeError("bce_loss: p" + shape_str(p.shape()) + " vs y" + shape_str(y.shape()));
    const std::int64_t n = p.size();
    const S lo = S(1e-7), hi = S(1) - S(1e-7);
    const S* pp = p.value().data();
    const S* py = y.data();
    S loss = S(0);
    for (std::int64_t i = 0; i < n; ++i) {
        if (pp[i] < S(0) || pp[i] > S(1))
            throw DomainError("bce_loss: probability outside [0,1]");
        const S pc = std::min(std::max(pp[i], lo), hi);
        loss -= py[i] * std::log(pc) + (S(1) - py[i]) * std::log(S(1) - pc);
    }
    loss /= static_cast<S>(n);
    Tensor<S> out = Tensor<S>::scalar(loss);
    kernels::ensure_finite(out.data(), 1, "bce_loss");

    Tensor<S> yc = y;  // shares the buffer; labels are constants
    const int pid = p.id, out_id = g.size();
    return g.make(std::move(out), g.needs_grad(pid), [pid, out_id, n, yc, lo, hi](Graph<S>& gr) {
        if (!gr.needs_grad(pid)) return;
        const S g0 = gr.grad(out_id)[0] / static_cast<S>(n);
        const S* pp = gr.value(pid).data();
        const S* py = yc.data();
        S* gp = gr.grad(pid);
        for (std::int64_t i = 0; i < n; ++i) {
            if (pp[i] < lo || pp[i] > hi) continue;  // clamped region: zero gradient
            gp[i] += g0 * (pp[i] - py[i]) / (pp[i] * (S(1) - pp[i]));
        }
    });
}

}  // namespace minidl
