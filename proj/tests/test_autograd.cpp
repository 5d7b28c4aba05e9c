#include <catch2/catch_amalgamated.hpp>

#include "minidl/classifier.hpp"
#include "minidl/ops.hpp"
#include "minidl/toydata.hpp"
#include "support/oracles.hpp"

using namespace minidl;

// Finite-difference step sizes and tolerances for the two scalar modes.
// The relative-error denominator is floored (see oracles.hpp): a floor of
// 0.1 at rtol 1e-3 is an absolute tolerance of 1e-4 for near-zero gradient
// pairs, where a pure ratio is ill-conditioned float noise.
namespace {

struct FdMode {
    double h;
    double tol;
    double floor;
};

constexpr FdMode kF32{1e-2, 1e-3, 0.1};
constexpr FdMode kF64{1e-4, 1e-5, 1e-6};

template <class S>
FdMode mode() {
    if constexpr (std::is_same_v<S, float>)
        return kF32;
    else
        return kF64;
}

template <class S>
void check_grad(const std::function<Var<S>(Graph<S>&)>& build, Tensor<S>& wrt,
                const Tensor<S>& weights, Rng& rng, int sample_coords = 0,
                double h_override = 0.0) {
    const FdMode m = mode<S>();
    const double h = h_override > 0.0 ? h_override : m.h;
    const double err =
        oracle::max_grad_rel_error<S>(build, wrt, weights, h, m.floor, sample_coords, &rng);
    REQUIRE(err <= m.tol);
}

}  // namespace

// Convolutions and linear maps are affine in each argument separately, so
// the central difference is truncation-free and a large step just averages
// away float rounding noise.
constexpr double kBilinearH32 = 0.25;

TEMPLATE_TEST_CASE("gradients: conv2d wrt x, w, b", "", float, double) {
    using S = TestType;
    Rng rng(101);
    const double h = std::is_same_v<S, float> ? kBilinearH32 : 0.0;
    for (int trial = 0; trial < 4; ++trial) {
        const int stride = 1 + static_cast<int>(rng.uniform_int(2));
        const int pad = static_cast<int>(rng.uniform_int(2));
        Tensor<S> x = oracle::uniform_tensor<S>({2, 2, 5, 5}, rng);
        Tensor<S> w = oracle::uniform_tensor<S>({3, 2, 3, 3}, rng);
        Tensor<S> b = oracle::uniform_tensor<S>({3}, rng);
        x.set_requires_grad(true);
        w.set_requires_grad(true);
        b.set_requires_grad(true);
        const int oh = (5 + 2 * pad - 3) / stride + 1;
        Tensor<S> lw = oracle::uniform_tensor<S>({2, 3, oh, oh}, rng, 0.5, 1.5);
        auto build = [&](Graph<S>& g) {
            return conv2d(g.param(x), g.param(w), g.param(b), stride, pad);
        };
        check_grad<S>(build, x, lw, rng, 0, h);
        check_grad<S>(build, w, lw, rng, 0, h);
        check_grad<S>(build, b, lw, rng, 0, h);
    }
}

TEMPLATE_TEST_CASE("gradients: conv_transpose2d wrt x, w, b", "", float, double) {
    using S = TestType;
    Rng rng(102);
    const double h = std::is_same_v<S, float> ? kBilinearH32 : 0.0;
    for (int trial = 0; trial < 4; ++trial) {
        Tensor<S> x = oracle::uniform_tensor<S>({2, 2, 3, 3}, rng);
        Tensor<S> w = oracle::uniform_tensor<S>({2, 3, 4, 4}, rng);
        Tensor<S> b = oracle::uniform_tensor<S>({3}, rng);
        x.set_requires_grad(true);
        w.set_requires_grad(true);
        b.set_requires_grad(true);
        Tensor<S> lw = oracle::uniform_tensor<S>({2, 3, 6, 6}, rng, 0.5, 1.5);
        auto build = [&](Graph<S>& g) {
            return conv_transpose2d(g.param(x), g.param(w), g.param(b), 2, 1);
        };
        check_grad<S>(build, x, lw, rng, 0, h);
        check_grad<S>(build, w, lw, rng, 0, h);
        check_grad<S>(build, b, lw, rng, 0, h);
    }
}

TEMPLATE_TEST_CASE("gradients: maxpool2d routes to the window argmax", "", float, double) {
    using S = TestType;
    Rng rng(103);
    for (int trial = 0; trial < 4; ++trial) {
        Tensor<S> x = oracle::well_separated<S>({2, 2, 6, 6}, rng);
        x.set_requires_grad(true);
        Tensor<S> lw = oracle::uniform_tensor<S>({2, 2, 3, 3}, rng, 0.5, 1.5);
        auto build = [&](Graph<S>& g) { return maxpool2d(g.param(x), 2, 2); };
        check_grad<S>(build, x, lw, rng);
    }
}

TEST_CASE("maxpool2d backward: one-hot to the first maximum on ties") {
    Tensor<double> x = Tensor<double>::from({1, 1, 2, 2}, {3.0, 3.0, 1.0, 0.0});
    x.set_requires_grad(true);
    Graph<double> g;
    auto y = maxpool2d(g.param(x), 2, 2);
    g.backward(weighted_sum(y, Tensor<double>::ones({1, 1, 1, 1})));
    REQUIRE(x.grad()[0] == 1.0);  // first occurrence in row-major order
    REQUIRE(x.grad()[1] == 0.0);
    REQUIRE(x.grad()[2] == 0.0);
    REQUIRE(x.grad()[3] == 0.0);
}

TEMPLATE_TEST_CASE("gradients: activations", "", float, double) {
    using S = TestType;
    Rng rng(104);
    for (int trial = 0; trial < 4; ++trial) {
        Tensor<S> lw = oracle::uniform_tensor<S>({3, 6}, rng, 0.5, 1.5);

        Tensor<S> xr = oracle::nonzero_tensor<S>({3, 6}, rng);
        xr.set_requires_grad(true);
        auto build_r = [&](Graph<S>& g) { return relu(g.param(xr)); };
        check_grad<S>(build_r, xr, lw, rng);

        Tensor<S> xl = oracle::nonzero_tensor<S>({3, 6}, rng);
        xl.set_requires_grad(true);
        auto build_l = [&](Graph<S>& g) { return leaky_relu(g.param(xl), S(0.2)); };
        check_grad<S>(build_l, xl, lw, rng);

        Tensor<S> xs = oracle::uniform_tensor<S>({3, 6}, rng, -1.2, 1.2);
        xs.set_requires_grad(true);
        auto build_s = [&](Graph<S>& g) { return sigmoid(g.param(xs)); };
        check_grad<S>(build_s, xs, lw, rng);

        Tensor<S> xt = oracle::uniform_tensor<S>({3, 6}, rng, -1.2, 1.2);
        xt.set_requires_grad(true);
        auto build_t = [&](Graph<S>& g) { return tanh_act(g.param(xt)); };
        check_grad<S>(build_t, xt, lw, rng);
    }
}

TEMPLATE_TEST_CASE("gradients: batchnorm2d train and eval", "", float, double) {
    using S = TestType;
    Rng rng(105);
    for (bool training : {true, false}) {
        Tensor<S> x = oracle::uniform_tensor<S>({3, 2, 4, 4}, rng, -2.0, 2.0);
        Tensor<S> gamma = oracle::uniform_tensor<S>({2}, rng, 0.5, 1.5);
        Tensor<S> beta = oracle::uniform_tensor<S>({2}, rng, -0.5, 0.5);
        x.set_requires_grad(true);
        gamma.set_requires_grad(true);
        beta.set_requires_grad(true);
        Tensor<S> lw = oracle::uniform_tensor<S>({3, 2, 4, 4}, rng, 0.5, 1.5);
        // fresh state per forward rebuild so running stats do not drift
        auto build = [&](Graph<S>& g) {
            BatchNormState<S> state(2);
            state.running_mean[0] = S(0.3);
            state.running_mean[1] = S(-0.2);
            state.running_var[0] = S(1.4);
            state.running_var[1] = S(0.8);
            return batchnorm2d(g.param(x), g.param(gamma), g.param(beta), state, S(1e-5), S(0.1),
                               training);
        };
        // batch statistics keep the x-dependence mildly nonlinear; a larger
        // 32-bit step drops rounding noise without visible truncation
        const double h = std::is_same_v<S, float> ? 0.05 : 0.0;
        check_grad<S>(build, x, lw, rng, 0, h);
        check_grad<S>(build, gamma, lw, rng, 0, h);
        check_grad<S>(build, beta, lw, rng, 0, h);
    }
}

TEMPLATE_TEST_CASE("gradients: dropout with a frozen mask", "", float, double) {
    using S = TestType;
    Rng rng(106);
    Tensor<S> x = oracle::uniform_tensor<S>({4, 8}, rng);
    x.set_requires_grad(true);
    Tensor<S> lw = oracle::uniform_tensor<S>({4, 8}, rng, 0.5, 1.5);
    auto build = [&](Graph<S>& g) {
        Rng mask_rng(777);  // same mask on every rebuild
        return dropout(g.param(x), 0.4, true, &mask_rng);
    };
    check_grad<S>(build, x, lw, rng);
}

TEMPLATE_TEST_CASE("gradients: linear wrt x, w, b", "", float, double) {
    using S = TestType;
    Rng rng(107);
    for (int trial = 0; trial < 4; ++trial) {
        Tensor<S> x = oracle::uniform_tensor<S>({3, 4}, rng);
        Tensor<S> w = oracle::uniform_tensor<S>({4, 5}, rng);
        Tensor<S> b = oracle::uniform_tensor<S>({5}, rng);
        x.set_requires_grad(true);
        w.set_requires_grad(true);
        b.set_requires_grad(true);
        Tensor<S> lw = oracle::uniform_tensor<S>({3, 5}, rng, 0.5, 1.5);
        auto build = [&](Graph<S>& g) { return linear(g.param(x), g.param(w), g.param(b)); };
        check_grad<S>(build, x, lw, rng);
        check_grad<S>(build, w, lw, rng);
        check_grad<S>(build, b, lw, rng);
    }
}

TEMPLATE_TEST_CASE("gradients: softmax cross-entropy matches finite differences", "", float,
                   double) {
    using S = TestType;
    Rng rng(108);
    for (int trial = 0; trial < 4; ++trial) {
        Tensor<S> logits = oracle::uniform_tensor<S>({4, 5}, rng, -2.0, 2.0);
        logits.set_requires_grad(true);
        std::vector<int> targets;
        for (int i = 0; i < 4; ++i) targets.push_back(static_cast<int>(rng.uniform_int(5)));
        Tensor<S> lw = Tensor<S>::ones({1});
        auto build = [&](Graph<S>& g) { return softmax_cross_entropy(g.param(logits), targets); };
        check_grad<S>(build, logits, lw, rng);
    }
}

TEST_CASE("softmax cross-entropy gradient equals softmax minus onehot") {
    Tensor<double> logits = Tensor<double>::from({1, 3}, {0.2, -0.4, 1.1});
    logits.set_requires_grad(true);
    Graph<double> g;
    auto loss = softmax_cross_entropy(g.param(logits), {2});
    g.backward(loss);
    double denom = 0.0;
    for (int j = 0; j < 3; ++j) denom += std::exp(logits[j]);
    for (int j = 0; j < 3; ++j) {
        const double p = std::exp(logits[j]) / denom;
        const double expect = p - (j == 2 ? 1.0 : 0.0);
        REQUIRE(logits.grad()[j] == Catch::Approx(expect).epsilon(1e-10));
    }
}

TEMPLATE_TEST_CASE("gradients: bce_loss away from the clamp", "", float, double) {
    using S = TestType;
    Rng rng(109);
    // The BCE third derivative grows as 1/p^3, so the 32-bit mode keeps p
    // well inside (0,1) and uses a smaller step.
    const bool f32 = std::is_same_v<S, float>;
    const double lo = f32 ? 0.35 : 0.1, hi = 1.0 - lo;
    const double h = f32 ? 3e-3 : 0.0;
    for (int trial = 0; trial < 4; ++trial) {
        Tensor<S> p = oracle::uniform_tensor<S>({4}, rng, lo, hi);
        p.set_requires_grad(true);
        Tensor<S> y({4});
        for (int i = 0; i < 4; ++i) y[i] = static_cast<S>(rng.bernoulli(0.5) ? 1 : 0);
        Tensor<S> lw = Tensor<S>::ones({1});
        auto build = [&](Graph<S>& g) { return bce_loss(g.param(p), y); };
        check_grad<S>(build, p, lw, rng, 0, h);
    }
}

TEMPLATE_TEST_CASE("gradients: add, reshape, index_scalar, weighted_sum", "", float, double) {
    using S = TestType;
    Rng rng(110);
    Tensor<S> a = oracle::uniform_tensor<S>({2, 6}, rng);
    Tensor<S> b = oracle::uniform_tensor<S>({2, 6}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor<S> lw = oracle::uniform_tensor<S>({2, 6}, rng, 0.5, 1.5);
    auto build_add = [&](Graph<S>& g) { return add(g.param(a), g.param(b)); };
    check_grad<S>(build_add, a, lw, rng);
    check_grad<S>(build_add, b, lw, rng);

    Tensor<S> r = oracle::uniform_tensor<S>({3, 4}, rng);
    r.set_requires_grad(true);
    Tensor<S> lw2 = oracle::uniform_tensor<S>({12}, rng, 0.5, 1.5);
    auto build_rs = [&](Graph<S>& g) { return reshape(g.param(r), {12}); };
    check_grad<S>(build_rs, r, lw2, rng);

    Tensor<S> ix = oracle::uniform_tensor<S>({5}, rng);
    ix.set_requires_grad(true);
    Tensor<S> one = Tensor<S>::ones({1});
    auto build_ix = [&](Graph<S>& g) { return index_scalar(g.param(ix), 3); };
    check_grad<S>(build_ix, ix, one, rng);

    Tensor<S> ws = oracle::uniform_tensor<S>({7}, rng);
    ws.set_requires_grad(true);
    Tensor<S> coef = oracle::uniform_tensor<S>({7}, rng);
    auto build_ws = [&](Graph<S>& g) { return weighted_sum(g.param(ws), coef); };
    check_grad<S>(build_ws, ws, one, rng);
}

TEST_CASE("backward: gradient of the loss with respect to itself is 1") {
    Tensor<double> x = Tensor<double>::from({2}, {0.5, -0.25});
    x.set_requires_grad(true);
    Graph<double> g;
    auto loss = weighted_sum(sigmoid(g.param(x)), Tensor<double>::ones({2}));
    g.backward(loss);
    REQUIRE(g.grad(loss.id)[0] == 1.0);
}

TEST_CASE("backward: misuse raises GraphError") {
    Tensor<float> x = Tensor<float>::ones({3});
    x.set_requires_grad(true);
    Graph<float> g;
    auto y = relu(g.param(x));
    REQUIRE_THROWS_AS(g.backward(y), GraphError);  // non-scalar loss

    auto loss = weighted_sum(y, Tensor<float>::ones({3}));
    g.backward(loss);
    REQUIRE_THROWS_AS(g.backward(loss), GraphError);  // twice without reset

    g.reset();
    auto loss2 = weighted_sum(relu(g.param(x)), Tensor<float>::ones({3}));
    g.backward(loss2);  // fine after reset
}

TEST_CASE("backward: gradients accumulate across graphs until zero_grad") {
    Tensor<double> x = Tensor<double>::from({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    const Tensor<double> w = Tensor<double>::from({2}, {3.0, 4.0});
    for (int pass = 0; pass < 2; ++pass) {
        Graph<double> g;
        g.backward(weighted_sum(g.param(x), w));
    }
    REQUIRE(x.grad()[0] == 6.0);
    REQUIRE(x.grad()[1] == 8.0);
    x.zero_grad();
    REQUIRE(x.grad()[0] == 0.0);
}

TEST_CASE("backward: full classifier gradients match finite differences (64-bit)") {
    // 2-sample batch at 48x48 through the whole stack in eval mode (dropout
    // off). Per parameter tensor: one random-direction probe covering every
    // coordinate jointly, plus a few sampled per-coordinate checks.
    Rng rng(2024);
    ClassifierConfig cfg;
    cfg.input_size = 48;
    Model<double> model = build_classifier<double>(cfg, rng);
    model.set_training(false);

    ToyConfig toy;
    auto samples = make_toy_samples(toy, 1, rng);
    auto data = toy_tensor_dataset<double>(samples);
    Tensor<double> batch = data.images;  // [2,3,48,48]
    std::vector<int> targets = data.labels;

    // The loss is piecewise smooth in the parameters (relu/maxpool kinks);
    // a perturbation that flips an activation invalidates the difference
    // quotient itself, so the step stays tiny and the tolerance absorbs the
    // rare near-kink coordinate.
    Tensor<double> one = Tensor<double>::ones({1});
    for (std::size_t pi = 0; pi < model.params().size(); ++pi) {
        Tensor<double>& p = model.params()[pi];
        auto build = [&](Graph<double>& g) {
            return softmax_cross_entropy(model.forward(g, g.input(batch)), targets);
        };
        const double dir_err =
            oracle::directional_grad_rel_error<double>(build, p, one, 1e-6, 1e-8, rng);
        REQUIRE(dir_err <= 1e-4);
        const double coord_err =
            oracle::max_grad_rel_error<double>(build, p, one, 1e-6, 1e-8, 4, &rng);
        REQUIRE(coord_err <= 1e-4);
    }
}
