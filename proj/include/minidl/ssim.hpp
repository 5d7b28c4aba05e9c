#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "minidl/errors.hpp"
#include "minidl/image.hpp"
#include "minidl/rng.hpp"

// Structural similarity (SSIM) over luminance/contrast/structure with the
// canonical 11x11 Gaussian window, and the ranking/selection helpers used
// to curate generated images against real references.

namespace minidl {

struct SsimParams {
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;  // L; images are [0,1] luma
    int window = 11;
    double sigma = 1.5;

    double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
    double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
    double c3() const { return c2() / 2.0; }  // folded into the two-factor formula

    // 1-D Gaussian taps, normalized to sum 1; the 2-D window is the outer
    // product, so its weights also sum to 1.
    std::vector<double> window_taps() const {
        if (window < 1 || window % 2 == 0) throw DomainError("ssim: window must be odd");
        if (!(sigma > 0)) throw DomainError("ssim: sigma must be > 0");
        std::vector<double> taps(static_cast<std::size_t>(window));
        const int half = window / 2;
        double sum = 0.0;
        for (int i = 0; i < window; ++i) {
            const double d = i - half;
            taps[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
            sum += taps[static_cast<std::size_t>(i)];
        }
        for (double& t : taps) t /= sum;
        return taps;
    }
};

// (candidate, class, aggregate score) record used for ranking.
struct SsimScore {
    std::string candidate_id;
    std::string class_name;
    double score = 0.0;
};

enum class SsimAggregator { Mean, Max };

namespace detail {

// Gaussian-filtered plane, valid positions only (no padding), separable.
inline std::vector<double> filter_valid(const std::vector<double>& in, int w, int h,
                                        const std::vector<double>& taps, int& out_w, int& out_h) {
    const int k = static_cast<int>(taps.size());
    out_w = w - k + 1;
    out_h = h - k + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * out_w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (int j = 0; j < k; ++j) acc += taps[static_cast<std::size_t>(j)] * in[static_cast<std::size_t>(y) * w + x + j];
            rows[static_cast<std::size_t>(y) * out_w + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(out_h) * out_w);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += taps[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>(y + i) * out_w + x];
            out[static_cast<std::size_t>(y) * out_w + x] = acc;
        }
    return out;
}

inline std::vector<double> to_plane(const Image& img) {
    std::vector<double> p(img.pixels.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<double>(img.pixels[i]);
    return p;
}

}  // namespace detail

// Per-window SSIM values over all valid (fully interior) window positions,
// row-major. Gaussian-weighted moments, computed in double precision.
inline std::vector<double> ssim_map(const Image& x, const Image& y, const SsimParams& p = {}) {
    if (x.channels != 1 || y.channels != 1)
        throw ShapeError("ssim expects single-channel (luma) images");
    if (x.width != y.width || x.height != y.height)
        throw ShapeError("ssim: image sizes differ");
    if (x.width < p.window || x.height < p.window)
        throw DomainError("ssim: image smaller than the " + std::to_string(p.window) + "x" +
                          std::to_string(p.window) + " window");

    const auto taps = p.window_taps();
    const auto px = detail::to_plane(x);
    const auto py = detail::to_plane(y);
    std::vector<double> xx(px.size()), yy(px.size()), xy(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
        xx[i] = px[i] * px[i];
        yy[i] = py[i] * py[i];
        xy[i] = px[i] * py[i];
    }
    int ow = 0, oh = 0;
    const auto mu_x = detail::filter_valid(px, x.width, x.height, taps, ow, oh);
    const auto mu_y = detail::filter_valid(py, x.width, x.height, taps, ow, oh);
    const auto m_xx = detail::filter_valid(xx, x.width, x.height, taps, ow, oh);
    const auto m_yy = detail::filter_valid(yy, x.width, x.height, taps, ow, oh);
    const auto m_xy = detail::filter_valid(xy, x.width, x.height, taps, ow, oh);

    const double c1 = p.c1(), c2 = p.c2();
    std::vector<double> map(mu_x.size());
    for (std::size_t i = 0; i < map.size(); ++i) {
        const double mx = mu_x[i], my = mu_y[i];
        const double var_x = std::max(0.0, m_xx[i] - mx * mx);
        const double var_y = std::max(0.0, m_yy[i] - my * my);
        const double cov = m_xy[i] - mx * my;
        map[i] = ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
                 ((mx * mx + my * my + c1) * (var_x + var_y + c2));
    }
    return map;
}

// Mean of the per-window map.
inline double ssim(const Image& x, const Image& y, const SsimParams& p = {}) {
    const auto map = ssim_map(x, y, p);
    double sum = 0.0;
    for (double v : map) sum += v;
    return sum / static_cast<double>(map.size());
}

// Aggregated SSIM of a candidate against a reference set. Inputs are
// converted to luma; sizes must already agree (resize upstream).
inline double score_against_references(const Image& candidate, const std::vector<Image>& refs,
                                       SsimAggregator aggregator = SsimAggregator::Mean,
                                       const SsimParams& p = {}) {
    if (refs.empty()) throw EmptyReferenceError("no reference images to score against");
    const Image cand = rgb_to_luma(candidate);
    double mean_acc = 0.0;
    double max_acc = -2.0;
    for (const Image& ref : refs) {
        const double s = ssim(cand, rgb_to_luma(ref), p);
        mean_acc += s;
        max_acc = std::max(max_acc, s);
    }
    const double score = aggregator == SsimAggregator::Mean
                             ? mean_acc / static_cast<double>(refs.size())
                             : max_acc;
    return std::clamp(score, -1.0, 1.0);
}

// Descending by score, stable on ties (input order preserved), truncated
// to min(k, pool size).
inline std::vector<SsimScore> rank_and_select(std::vector<SsimScore> pool, std::size_t k) {
    std::stable_sort(pool.begin(), pool.end(),
                     [](const SsimScore& a, const SsimScore& b) { return a.score > b.score; });
    if (pool.size() > k) pool.resize(k);
    return pool;
}

// Uniform sample of k candidates without replacement; output keeps the
// input order (a selection is a set).
inline std::vector<SsimScore> random_select(const std::vector<SsimScore>& pool, std::size_t k,
                                            Rng& rng) {
    const auto idx = rng.sample_without_replacement(pool.size(), std::min(k, pool.size()));
    std::vector<SsimScore> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(pool[i]);
    return out;
}

}  // namespace minidl
