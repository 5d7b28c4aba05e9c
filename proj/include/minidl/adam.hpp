#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "minidl/errors.hpp"
#include "minidl/tensor.hpp"

namespace minidl {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // coupled L2: g <- g + wd * theta before the moment updates

    void validate() const {
        if (!(lr > 0)) throw ConfigError("adam: lr must be > 0");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ConfigError("adam: betas must be in [0,1)");
        if (!(eps > 0)) throw ConfigError("adam: eps must be > 0");
        if (weight_decay < 0) throw ConfigError("adam: weight_decay must be >= 0");
    }
};

// First/second moment estimates, one pair per parameter tensor.
template <class S>
struct AdamState {
    std::int64_t step_count = 0;
    std::vector<std::vector<S>> m;
    std::vector<std::vector<S>> v;

    bool initialized() const { return !m.empty(); }
};

// One Adam update with bias correction over a parameter list. Parameters
// without an allocated gradient buffer are treated as zero-gradient (they
// still decay when weight_decay > 0).
template <class S>
void adam_step(std::vector<Tensor<S>>& params, AdamState<S>& state, const AdamConfig& cfg) {
    cfg.validate();
    if (!state.initialized()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(static_cast<std::size_t>(params[i].size()), S(0));
            state.v[i].assign(static_cast<std::size_t>(params[i].size()), S(0));
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam: state/parameter count mismatch");

    state.step_count += 1;
    const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
    const S lr = static_cast<S>(cfg.lr), eps = static_cast<S>(cfg.eps);
    const S wd = static_cast<S>(cfg.weight_decay);
    const S bc1 = S(1) - static_cast<S>(std::pow(cfg.beta1, static_cast<double>(state.step_count)));
    const S bc2 = S(1) - static_cast<S>(std::pow(cfg.beta2, static_cast<double>(state.step_count)));

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<S>& p = params[i];
        const std::int64_t n = p.size();
        if (static_cast<std::int64_t>(state.m[i].size()) != n)
            throw ShapeError("adam: moment shape mismatch for parameter " + std::to_string(i));
        const S* grad = p.grad();
        S* theta = p.data();
        S* m = state.m[i].data();
        S* v = state.v[i].data();
        for (std::int64_t j = 0; j < n; ++j) {
            S gj = grad ? grad[j] : S(0);
            gj += wd * theta[j];
            m[j] = b1 * m[j] + (S(1) - b1) * gj;
            v[j] = b2 * v[j] + (S(1) - b2) * gj * gj;
            const S mhat = m[j] / bc1;
            const S vhat = v[j] / bc2;
            theta[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace minidl
