#pragma once

// Independent reference implementations the tests check the library
// against. Everything here is deliberately naive (straight loops, explicit
// per-window moments) and shares no code with the implementation paths it
// verifies.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "minidl/dataset.hpp"
#include "minidl/graph.hpp"
#include "minidl/image.hpp"
#include "minidl/ops.hpp"
#include "minidl/rng.hpp"
#include "minidl/ssim.hpp"
#include "minidl/tensor.hpp"

namespace oracle {

using minidl::Graph;
using minidl::Image;
using minidl::Rng;
using minidl::Shape;
using minidl::Tensor;
using minidl::Var;

// Seven-loop cross-correlation.
template <class S>
Tensor<S> naive_conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride,
                       int pad) {
    const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    Tensor<S> out({n, cout, oh, ow});
    for (int i = 0; i < n; ++i)
        for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = static_cast<double>(b[co]);
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * stride - pad + ky;
                                const int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                                const auto xv = x[((static_cast<std::int64_t>(i) * cin + ci) * h + iy) * wd + ix];
                                const auto wv = w[((static_cast<std::int64_t>(co) * cin + ci) * kh + ky) * kw + kx];
                                acc += static_cast<double>(xv) * static_cast<double>(wv);
                            }
                    out[((static_cast<std::int64_t>(i) * cout + co) * oh + oy) * ow + ox] =
                        static_cast<S>(acc);
                }
    return out;
}

template <class S>
Tensor<S> naive_maxpool2d(const Tensor<S>& x, int k, int stride) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = (h - k) / stride + 1;
    const int ow = (w - k) / stride + 1;
    Tensor<S> out({n, c, oh, ow});
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    S best = x[((static_cast<std::int64_t>(i) * c + ch) * h + oy * stride) * w +
                               ox * stride];
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx)
                            best = std::max(
                                best, x[((static_cast<std::int64_t>(i) * c + ch) * h + oy * stride + ky) * w +
                                        ox * stride + kx]);
                    out[((static_cast<std::int64_t>(i) * c + ch) * oh + oy) * ow + ox] = best;
                }
    return out;
}

// Direct per-window SSIM with explicitly centered moments (no separable
// filtering, no E[x^2]-mu^2 shortcut).
inline double brute_force_ssim(const Image& x, const Image& y, const minidl::SsimParams& p = {}) {
    const auto taps = p.window_taps();
    const int k = p.window;
    const int oh = x.height - k + 1;
    const int ow = x.width - k + 1;
    const double c1 = p.c1(), c2 = p.c2();
    double total = 0.0;
    for (int wy = 0; wy < oh; ++wy)
        for (int wx = 0; wx < ow; ++wx) {
            double mx = 0.0, my = 0.0;
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                    const double wgt = taps[static_cast<std::size_t>(i)] * taps[static_cast<std::size_t>(j)];
                    mx += wgt * x.at(wx + j, wy + i, 0);
                    my += wgt * y.at(wx + j, wy + i, 0);
                }
            double vx = 0.0, vy = 0.0, cov = 0.0;
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                    const double wgt = taps[static_cast<std::size_t>(i)] * taps[static_cast<std::size_t>(j)];
                    const double dx = x.at(wx + j, wy + i, 0) - mx;
                    const double dy = y.at(wx + j, wy + i, 0) - my;
                    vx += wgt * dx * dx;
                    vy += wgt * dy * dy;
                    cov += wgt * dx * dy;
                }
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
                     ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    return total / static_cast<double>(oh * ow);
}

// Central finite differences of L = <weights, build(...)> against the
// autograd gradient of `wrt`. `build` must rebuild the forward pass on the
// given graph (registering `wrt` as a param) every call. Returns the
// maximum relative error over the checked coordinates, where
// rel = |fd - ad| / max(|fd| + |ad|, floor).
template <class S>
double max_grad_rel_error(const std::function<Var<S>(Graph<S>&)>& build, Tensor<S>& wrt,
                          const Tensor<S>& weights, double h, double floor,
                          int sample_coords = 0, Rng* rng = nullptr) {
    wrt.zero_grad();
    Graph<S> g;
    Var<S> out = build(g);
    Var<S> loss = minidl::weighted_sum(out, weights);
    g.backward(loss);
    std::vector<double> analytic(static_cast<std::size_t>(wrt.size()));
    for (std::int64_t i = 0; i < wrt.size(); ++i)
        analytic[static_cast<std::size_t>(i)] = static_cast<double>(wrt.grad()[i]);

    auto loss_value = [&]() {
        Graph<S> g2;
        Var<S> o = build(g2);
        Var<S> l = minidl::weighted_sum(o, weights);
        return static_cast<double>(l.value().item());
    };

    std::vector<std::int64_t> coords;
    if (sample_coords > 0 && sample_coords < wrt.size()) {
        for (auto idx : rng->sample_without_replacement(static_cast<std::size_t>(wrt.size()),
                                                        static_cast<std::size_t>(sample_coords)))
            coords.push_back(static_cast<std::int64_t>(idx));
    } else {
        for (std::int64_t i = 0; i < wrt.size(); ++i) coords.push_back(i);
    }

    double worst = 0.0;
    for (std::int64_t i : coords) {
        const S saved = wrt[i];
        wrt[i] = saved + static_cast<S>(h);
        const double lp = loss_value();
        wrt[i] = saved - static_cast<S>(h);
        const double lm = loss_value();
        wrt[i] = saved;
        const double fd = (lp - lm) / (2.0 * h);
        const double ad = analytic[static_cast<std::size_t>(i)];
        const double rel = std::abs(fd - ad) / std::max(std::abs(fd) + std::abs(ad), floor);
        worst = std::max(worst, rel);
    }
    return worst;
}

// Central-difference check along one random direction v: compares
// (L(w + h v) - L(w - h v)) / 2h with <grad, v>. One probe validates the
// complete gradient of `wrt` through a random linear functional.
template <class S>
double directional_grad_rel_error(const std::function<Var<S>(Graph<S>&)>& build, Tensor<S>& wrt,
                                  const Tensor<S>& weights, double h, double floor, Rng& rng) {
    wrt.zero_grad();
    Graph<S> g;
    Var<S> loss = minidl::weighted_sum(build(g), weights);
    g.backward(loss);

    std::vector<double> dir(static_cast<std::size_t>(wrt.size()));
    double norm = 0.0;
    for (auto& d : dir) {
        d = rng.normal();
        norm += d * d;
    }
    norm = std::sqrt(norm);
    for (auto& d : dir) d /= norm;

    double analytic = 0.0;
    for (std::int64_t i = 0; i < wrt.size(); ++i)
        analytic += static_cast<double>(wrt.grad()[i]) * dir[static_cast<std::size_t>(i)];

    std::vector<S> saved(wrt.data(), wrt.data() + wrt.size());
    auto eval = [&](double sign) {
        for (std::int64_t i = 0; i < wrt.size(); ++i)
            wrt[i] = saved[static_cast<std::size_t>(i)] +
                     static_cast<S>(sign * h * dir[static_cast<std::size_t>(i)]);
        Graph<S> g2;
        Var<S> l = minidl::weighted_sum(build(g2), weights);
        return static_cast<double>(l.value().item());
    };
    const double lp = eval(1.0);
    const double lm = eval(-1.0);
    for (std::int64_t i = 0; i < wrt.size(); ++i) wrt[i] = saved[static_cast<std::size_t>(i)];

    const double fd = (lp - lm) / (2.0 * h);
    return std::abs(fd - analytic) / std::max(std::abs(fd) + std::abs(analytic), floor);
}

// Tensor whose entries are pairwise separated by at least `gap` (keeps
// finite differences away from max/relu kinks), in shuffled order.
template <class S>
Tensor<S> well_separated(Shape shape, Rng& rng, double gap = 0.05) {
    Tensor<S> t(shape);
    std::vector<std::int64_t> order(static_cast<std::size_t>(t.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
    rng.shuffle(order);
    const double span = gap * static_cast<double>(t.size());
    for (std::size_t rank = 0; rank < order.size(); ++rank)
        t[order[rank]] = static_cast<S>(gap * static_cast<double>(rank) - span / 2.0 +
                                        rng.uniform(0.0, gap * 0.2));
    return t;
}

template <class S>
Tensor<S> uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<S> t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

// Values bounded away from zero (safe for relu/leaky-relu differencing).
template <class S>
Tensor<S> nonzero_tensor(Shape shape, Rng& rng, double margin = 0.15) {
    Tensor<S> t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) {
        const double mag = margin + rng.uniform(0.0, 1.0);
        t[i] = static_cast<S>(rng.bernoulli(0.5) ? mag : -mag);
    }
    return t;
}

// L2 nearest-centroid classifier; the independent reference for the toy
// separable dataset.
template <class S>
std::vector<int> nearest_centroid_predict(const minidl::TensorDataset<S>& train,
                                          const minidl::TensorDataset<S>& test) {
    const std::int64_t dim = train.images.size() / train.size();
    int num_classes = 0;
    for (int label : train.labels) num_classes = std::max(num_classes, label + 1);
    std::vector<std::vector<double>> centroids(static_cast<std::size_t>(num_classes),
                                               std::vector<double>(static_cast<std::size_t>(dim), 0.0));
    std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (std::int64_t i = 0; i < train.size(); ++i) {
        const int label = train.labels[static_cast<std::size_t>(i)];
        counts[static_cast<std::size_t>(label)] += 1;
        for (std::int64_t j = 0; j < dim; ++j)
            centroids[static_cast<std::size_t>(label)][static_cast<std::size_t>(j)] +=
                static_cast<double>(train.images[i * dim + j]);
    }
    for (int c = 0; c < num_classes; ++c)
        for (std::int64_t j = 0; j < dim; ++j)
            centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] /=
                static_cast<double>(counts[static_cast<std::size_t>(c)]);

    std::vector<int> preds(static_cast<std::size_t>(test.size()));
    for (std::int64_t i = 0; i < test.size(); ++i) {
        double best = 0.0;
        int best_c = -1;
        for (int c = 0; c < num_classes; ++c) {
            double d2 = 0.0;
            for (std::int64_t j = 0; j < dim; ++j) {
                const double d = static_cast<double>(test.images[i * dim + j]) -
                                 centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
                d2 += d * d;
            }
            if (best_c < 0 || d2 < best) {
                best = d2;
                best_c = c;
            }
        }
        preds[static_cast<std::size_t>(i)] = best_c;
    }
    return preds;
}

}  // namespace oracle
