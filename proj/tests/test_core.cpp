#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "minidl/adam.hpp"
#include "minidl/rng.hpp"
#include "minidl/tensor.hpp"

using namespace minidl;

TEST_CASE("rng: identical seed gives identical stream") {
    Rng a(1234), b(1234);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
    Rng c(1235);
    bool any_diff = false;
    Rng a2(1234);
    for (int i = 0; i < 16; ++i) any_diff |= (a2.next_u64() != c.next_u64());
    REQUIRE(any_diff);
}

TEST_CASE("rng: u01 and uniform stay in range") {
    Rng rng(7);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.u01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.uniform(-2.5, 3.5);
        REQUIRE(v >= -2.5);
        REQUIRE(v < 3.5);
    }
}

TEST_CASE("rng: normal has sane moments") {
    Rng rng(99);
    double sum = 0, sum2 = 0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sum2 += v * v;
    }
    REQUIRE(std::abs(sum / n) < 0.02);
    REQUIRE(std::abs(sum2 / n - 1.0) < 0.03);
}

TEST_CASE("rng: uniform_int bounds and rough uniformity") {
    Rng rng(5);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 14000; ++i) counts[static_cast<std::size_t>(rng.uniform_int(7))]++;
    for (int c : counts) REQUIRE(std::abs(c - 2000) < 300);
    REQUIRE_THROWS_AS(rng.uniform_int(0), DomainError);
}

TEST_CASE("rng: shuffle is a permutation, deterministic per seed") {
    std::vector<int> v(100);
    for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = i;
    auto w = v;
    Rng a(42), b(42);
    a.shuffle(v);
    b.shuffle(w);
    REQUIRE(v == w);
    std::set<int> seen(v.begin(), v.end());
    REQUIRE(seen.size() == 100);
}

TEST_CASE("rng: sample_without_replacement") {
    Rng rng(3);
    auto s = rng.sample_without_replacement(50, 10);
    REQUIRE(s.size() == 10);
    std::set<std::size_t> uniq(s.begin(), s.end());
    REQUIRE(uniq.size() == 10);
    REQUIRE(std::is_sorted(s.begin(), s.end()));
    for (auto i : s) REQUIRE(i < 50);

    auto all = rng.sample_without_replacement(8, 8);
    REQUIRE(all.size() == 8);
    for (std::size_t i = 0; i < 8; ++i) REQUIRE(all[i] == i);
    REQUIRE_THROWS_AS(rng.sample_without_replacement(3, 4), DomainError);
}

TEST_CASE("tensor: shape/data invariants") {
    REQUIRE_THROWS_AS(Tensor<float>({2, 3}, {1.f, 2.f}), ShapeError);
    REQUIRE_THROWS_AS(Tensor<float>({0, 3}), ShapeError);
    Tensor<float> t({2, 3});
    REQUIRE(t.size() == 6);
    REQUIRE(t.ndim() == 2);
    for (int i = 0; i < 6; ++i) REQUIRE(t[i] == 0.0f);
}

TEST_CASE("tensor: grad buffer matches shape and zeroes") {
    Tensor<double> t({4});
    t.set_requires_grad(true);
    REQUIRE(t.grad() == nullptr);
    t.grad_buffer();
    REQUIRE(t.grad() != nullptr);
    t.grad()[2] = 5.0;
    t.zero_grad();
    REQUIRE(t.grad()[2] == 0.0);
}

TEST_CASE("tensor: reshape preserves data, validates count") {
    Tensor<float> t = Tensor<float>::from({2, 2}, {1, 2, 3, 4});
    auto r = t.reshaped({4});
    REQUIRE(r[3] == 4.0f);
    REQUIRE_THROWS_AS(t.reshaped({3}), ShapeError);
    r[0] = 9.0f;  // shared buffer
    REQUIRE(t[0] == 9.0f);
    auto c = t.clone();
    c[0] = 1.0f;
    REQUIRE(t[0] == 9.0f);
}

TEST_CASE("adam: zero gradient and zero weight decay leave parameters unchanged") {
    std::vector<Tensor<double>> params{Tensor<double>::from({3}, {1.0, -2.0, 0.5})};
    params[0].set_requires_grad(true);
    params[0].grad_buffer();  // zeros
    AdamState<double> state;
    adam_step(params, state, AdamConfig{0.001, 0.9, 0.999, 1e-8, 0.0});
    REQUIRE(params[0][0] == 1.0);
    REQUIRE(params[0][1] == -2.0);
    REQUIRE(params[0][2] == 0.5);
    REQUIRE(state.step_count == 1);
}

TEST_CASE("adam: first step with unit gradient moves by lr/(1+eps)") {
    // m_hat = 1, v_hat = 1 after bias correction, so the update is
    // lr * 1 / (sqrt(1) + eps) = 0.001 / 1.00000001 ~= 0.000999999.
    std::vector<Tensor<double>> params{Tensor<double>::full({4}, 0.25)};
    params[0].set_requires_grad(true);
    params[0].grad_buffer();
    for (int i = 0; i < 4; ++i) params[0].grad()[i] = 1.0;
    AdamState<double> state;
    adam_step(params, state, AdamConfig{0.001, 0.9, 0.999, 1e-8, 0.0});
    const double expected_step = 0.001 / (1.0 + 1e-8);
    for (int i = 0; i < 4; ++i)
        REQUIRE(params[0][i] == Catch::Approx(0.25 - expected_step).epsilon(1e-12));
}

TEST_CASE("adam: coupled weight decay acts as gradient wd*theta") {
    // theta = 1, g = 0, wd = 0.01: effective gradient 0.01, so
    // m_hat = 0.01, v_hat = 1e-4, step = lr * 0.01/(0.01 + eps) ~= lr.
    std::vector<Tensor<double>> params{Tensor<double>::ones({2})};
    params[0].set_requires_grad(true);
    params[0].grad_buffer();
    AdamState<double> state;
    adam_step(params, state, AdamConfig{0.001, 0.9, 0.999, 1e-8, 0.01});
    const double expected = 1.0 - 0.001 * 0.01 / (0.01 + 1e-8);
    REQUIRE(params[0][0] == Catch::Approx(expected).epsilon(1e-9));
    REQUIRE(params[0][0] < 1.0);  // moves toward zero
}

TEST_CASE("adam: config validation") {
    std::vector<Tensor<float>> params{Tensor<float>::ones({1})};
    params[0].set_requires_grad(true);
    AdamState<float> state;
    REQUIRE_THROWS_AS(adam_step(params, state, AdamConfig{0.0, 0.9, 0.999, 1e-8, 0.0}),
                      ConfigError);
    REQUIRE_THROWS_AS(adam_step(params, state, AdamConfig{0.001, 1.0, 0.999, 1e-8, 0.0}),
                      ConfigError);
    REQUIRE_THROWS_AS(adam_step(params, state, AdamConfig{0.001, 0.9, 0.999, 0.0, 0.0}),
                      ConfigError);
    REQUIRE_THROWS_AS(adam_step(params, state, AdamConfig{0.001, 0.9, 0.999, 1e-8, -0.1}),
                      ConfigError);
}

TEST_CASE("adam: moments start at zero and v stays nonnegative") {
    std::vector<Tensor<double>> params{Tensor<double>::ones({8})};
    params[0].set_requires_grad(true);
    params[0].grad_buffer();
    AdamState<double> state;
    Rng rng(1);
    for (int step = 0; step < 25; ++step) {
        for (int i = 0; i < 8; ++i) params[0].grad()[i] = rng.normal();
        adam_step(params, state, AdamConfig{0.01, 0.9, 0.999, 1e-8, 0.0});
        for (const auto& v : state.v[0]) REQUIRE(v >= 0.0);
    }
    REQUIRE(state.step_count == 25);
}
