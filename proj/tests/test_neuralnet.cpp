#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "rail/neuralnet.hpp"
#include "rail/rng.hpp"

using namespace rail;

namespace {

double fd_loss_derivative(nn::QNetwork net, std::size_t p, const std::vector<double>& x,
                          const std::vector<double>& w, double h = 1e-5) {
    auto loss = [&](double delta) {
        net.params[p] += delta;
        ++net.revision;
        std::vector<double> q = nn::forward(net, x);
        net.params[p] -= delta;
        double s = 0;
        for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * q[i];
        return s;
    };
    return (loss(h) - loss(-h)) / (2 * h);
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace

TEST_CASE("pau_forward: identity, constant, hand-evaluated ratio") {
    std::array<double, 6> ident{0, 1, 0, 0, 0, 0};
    std::array<double, 4> zero{0, 0, 0, 0};
    CHECK(nn::pau_forward(ident, zero, 3.7) == doctest::Approx(3.7));

    std::array<double, 6> cnst{4.25, 0, 0, 0, 0, 0};
    CHECK(nn::pau_forward(cnst, zero, -123.0) == doctest::Approx(4.25));

    std::array<double, 6> a{0, 1, 2, 0, 0, 0};
    std::array<double, 4> b{1, 0, 0, 0};
    CHECK(nn::pau_forward(a, b, 2.0) == doctest::Approx(10.0 / 3.0));
}

TEST_CASE("pau relu-fit stays close to the rectifier on [-3,3]") {
    const auto& a = nn::kPauReluNum;
    const auto& b = nn::kPauReluDen;
    CHECK(std::abs(nn::pau_forward(a, b, 2.0) - 2.0) < 0.15);
    for (double x = -3.0; x <= 3.0; x += 0.05)
        CHECK(std::abs(nn::pau_forward(a, b, x) - std::max(0.0, x)) < 0.15);
}

TEST_CASE("pau output is finite over a huge input range") {
    const auto& a = nn::kPauReluNum;
    const auto& b = nn::kPauReluDen;
    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
        double x = (rng.uniform_real() * 2 - 1) * 1e6;
        CHECK(std::isfinite(nn::pau_forward(a, b, x)));
    }
}

TEST_CASE("pau_backward: identity config, x=0 slope, sign structure") {
    std::array<double, 6> ident{0, 1, 0, 0, 0, 0};
    std::array<double, 4> zero{0, 0, 0, 0};
    auto g = nn::pau_backward(ident, zero, 2.5, 1.0);
    CHECK(g.dx == doctest::Approx(1.0));
    CHECK(g.da[0] == doctest::Approx(1.0));
    CHECK(g.da[1] == doctest::Approx(2.5));
    CHECK(g.da[2] == doctest::Approx(6.25));
    for (double db : g.db) CHECK(db == 0.0);  // sign(0) subgradient

    std::array<double, 6> a{0.3, 0.7, -0.2, 0.1, 0, 0};
    std::array<double, 4> b{0.5, -0.3, 0.2, 0.05};
    auto g0 = nn::pau_backward(a, b, 0.0, 1.0);
    CHECK(g0.dx == doctest::Approx(a[1]));  // denominator is 1 at x=0
}

TEST_CASE("mlp_init: determinism, sizes, pau coefficients in place") {
    auto a = nn::mlp_init(4, {8, 8}, 5, nn::ActivationSpec::pau_relu_init(true), 42);
    auto b = nn::mlp_init(4, {8, 8}, 5, nn::ActivationSpec::pau_relu_init(true), 42);
    CHECK(a.params == b.params);
    CHECK(a.d_out == 5);
    CHECK(a.params.size() == a.weights_end + 2 * nn::kPauCoeffs);
    for (int l = 0; l < 2; ++l)
        for (int j = 0; j < nn::kPauNumCoeffs; ++j) CHECK(a.pau_a(l)[j] == nn::kPauReluNum[j]);
    CHECK_THROWS_AS(nn::mlp_init(0, {4}, 2, nn::ActivationSpec::rectifier(), 1),
                    std::invalid_argument);
}

TEST_CASE("forward: zero net gives zero q, batching matches per-row calls") {
    auto net = nn::mlp_init(3, {4, 4}, 5, nn::ActivationSpec::rectifier(), 9);
    std::fill(net.params.begin(), net.params.end(), 0.0);
    ++net.revision;
    std::vector<double> q = nn::forward(net, std::vector<double>{1.0, -2.0, 0.5});
    for (double v : q) CHECK(v == 0.0);

    auto rnet = nn::mlp_init(3, {6, 4}, 5, nn::ActivationSpec::pau_relu_init(true), 10);
    Rng rng(2);
    const int B = 7;
    std::vector<double> X(std::size_t(B) * 3);
    for (double& v : X) v = rng.uniform_real() * 2 - 1;
    std::vector<double> Q(std::size_t(B) * 5);
    nn::forward_batch(rnet, X.data(), B, Q.data());
    for (int r = 0; r < B; ++r) {
        std::vector<double> row(X.begin() + r * 3, X.begin() + (r + 1) * 3);
        std::vector<double> q1 = nn::forward(rnet, row);
        for (int j = 0; j < 5; ++j) CHECK(Q[r * 5 + j] == doctest::Approx(q1[j]).epsilon(1e-12));
    }

    CHECK_THROWS_AS(nn::forward(rnet, std::vector<double>{1.0}), nn::NnError);
}

TEST_CASE("hand-computed toy forward") {
    // 2 -> 2 -> 2 rectifier net with fixed weights.
    auto net = nn::mlp_init(2, {2}, 2, nn::ActivationSpec::rectifier(), 0);
    // layer 0: W=[[1,0],[0,-1]], b=[0.5, 0]; layer 1: W=[[2,1],[0,1]], b=[0,0]
    double p[] = {1, 0, 0, -1, 0.5, 0, 2, 1, 0, 1, 0, 0};
    std::copy(std::begin(p), std::end(p), net.params.begin());
    ++net.revision;
    // x = (1, 2): z0 = (1.5, -2) -> relu (1.5, 0) -> q = (3, 0)
    std::vector<double> q = nn::forward(net, std::vector<double>{1.0, 2.0});
    CHECK(q[0] == doctest::Approx(3.0));
    CHECK(q[1] == doctest::Approx(0.0));
}

TEST_CASE("backward matches central differences on random small nets") {
    Rng rng(77);
    int checked = 0;
    for (int trial = 0; trial < 12; ++trial) {
        const bool pau = trial % 2 == 0;
        int d_in = 2 + int(rng.bounded(4));
        int h1 = 3 + int(rng.bounded(5));
        int h2 = 3 + int(rng.bounded(5));
        int d_out = 2 + int(rng.bounded(3));
        auto net = nn::mlp_init(d_in, {h1, h2}, d_out,
                                pau ? nn::ActivationSpec::pau_relu_init(true)
                                    : nn::ActivationSpec::rectifier(),
                                1000 + trial);
        std::vector<double> x(d_in), w(d_out);
        for (double& v : x) v = rng.uniform_real() * 2 - 1;
        for (double& v : w) v = rng.uniform_real() * 2 - 1;

        nn::ForwardCache cache;
        nn::forward(net, x, &cache);
        nn::Gradients g = nn::backward(net, cache, w);
        for (std::size_t p = 0; p < net.params.size(); p += 3) {
            double fd = fd_loss_derivative(net, p, x, w);
            if (std::abs(g.flat[p] - fd) > 1e-7) CHECK(rel_err(g.flat[p], fd) < 1e-4);
            ++checked;
        }
    }
    CHECK(checked > 200);
}

TEST_CASE("backward: frozen pau gets zero coefficient gradients; zero upstream zeroes all") {
    auto net = nn::mlp_init(3, {4, 4}, 2, nn::ActivationSpec::pau_relu_init(false), 3);
    std::vector<double> x{0.2, -0.4, 0.9};
    nn::ForwardCache cache;
    nn::forward(net, x, &cache);
    nn::Gradients g = nn::backward(net, cache, std::vector<double>{1.0, -1.0});
    for (std::size_t i = net.weights_end; i < net.params.size(); ++i) CHECK(g.flat[i] == 0.0);

    nn::Gradients gz = nn::backward(net, cache, std::vector<double>{0.0, 0.0});
    for (double v : gz.flat) CHECK(v == 0.0);
}

TEST_CASE("stale cache is rejected after a parameter update") {
    auto net = nn::mlp_init(2, {3}, 2, nn::ActivationSpec::rectifier(), 5);
    nn::ForwardCache cache;
    nn::forward(net, std::vector<double>{0.1, 0.2}, &cache);
    nn::Gradients g = nn::backward(net, cache, std::vector<double>{1.0, 0.0});
    nn::OptState opt;
    nn::adam_step(net, g, opt);
    CHECK_THROWS_AS(nn::backward(net, cache, std::vector<double>{1.0, 0.0}), nn::NnError);
}

TEST_CASE("adam: zero grads keep parameters, first step is lr-scaled sign") {
    auto net = nn::mlp_init(2, {3}, 2, nn::ActivationSpec::rectifier(), 5);
    auto before = net.params;
    nn::Gradients zero;
    zero.flat.assign(net.params.size(), 0.0);
    nn::OptState opt;
    nn::adam_step(net, zero, opt);
    CHECK(net.params == before);

    nn::Gradients g;
    g.flat.assign(net.params.size(), 0.0);
    g.flat[0] = 0.37;
    g.flat[5] = -2.1;
    nn::OptState opt2;
    opt2.lr = 1e-3;
    auto base = net.params;
    nn::adam_step(net, g, opt2);
    // First bias-corrected step: -lr * g / (|g| + eps).
    CHECK(net.params[0] ==
          doctest::Approx(base[0] - 1e-3 * 0.37 / (0.37 + 1e-8)).epsilon(1e-12));
    CHECK(net.params[5] ==
          doctest::Approx(base[5] + 1e-3 * 2.1 / (2.1 + 1e-8)).epsilon(1e-12));
    CHECK(net.params[1] == base[1]);
}

TEST_CASE("adam never touches frozen pau coefficients") {
    auto net = nn::mlp_init(2, {3, 3}, 2, nn::ActivationSpec::pau_relu_init(true), 5);
    net.pau_trainable = false;
    auto pau_before = std::vector<double>(net.params.begin() + net.weights_end, net.params.end());
    nn::Gradients g;
    g.flat.assign(net.params.size(), 0.25);  // nonzero even in the pau tail
    nn::OptState opt;
    for (int i = 0; i < 10; ++i) nn::adam_step(net, g, opt);
    auto pau_after = std::vector<double>(net.params.begin() + net.weights_end, net.params.end());
    CHECK(pau_before == pau_after);
}

TEST_CASE("average_weights: mean, j=1 copy, weighted coefficients, pau reset") {
    auto n1 = nn::mlp_init(2, {2}, 2, nn::ActivationSpec::pau_relu_init(true), 1);
    auto n2 = n1;
    std::fill(n1.params.begin(), n1.params.begin() + n1.weights_end, 1.0);
    std::fill(n2.params.begin(), n2.params.begin() + n2.weights_end, 3.0);
    // Shift the pau coefficients so the reset is observable.
    for (std::size_t i = n1.weights_end; i < n1.params.size(); ++i) n1.params[i] += 0.5;

    auto avg = nn::average_weights({&n1, &n2}, std::vector<double>{1.0, 1.0});
    for (std::size_t i = 0; i < n1.weights_end; ++i) CHECK(avg[i] == doctest::Approx(2.0));
    CHECK(avg[n1.weights_end] == doctest::Approx(nn::kPauReluNum[0]));

    auto solo = nn::average_weights({&n1}, std::vector<double>{1.0});
    for (std::size_t i = 0; i < n1.weights_end; ++i) CHECK(solo[i] == n1.params[i]);

    auto weighted = nn::average_weights({&n1, &n2}, std::vector<double>{2.0, 0.0});
    for (std::size_t i = 0; i < n1.weights_end; ++i) CHECK(weighted[i] == doctest::Approx(1.0));

    auto other = nn::mlp_init(3, {2}, 2, nn::ActivationSpec::pau_relu_init(true), 1);
    CHECK_THROWS_AS(nn::average_weights({&n1, &other}, std::vector<double>{1.0, 1.0}),
                    nn::NnError);
}

TEST_CASE("checkpoint round trip preserves parameters exactly") {
    auto net = nn::mlp_init(4, {6, 5}, 5, nn::ActivationSpec::pau_relu_init(true), 21);
    auto path = std::filesystem::temp_directory_path() / "railnet_test.ckpt";
    nn::save_network(net, path.string());
    auto back = nn::load_network(path.string());
    CHECK(back.params == net.params);
    CHECK(back.hidden == net.hidden);
    CHECK(back.act_kind == net.act_kind);
    CHECK(back.pau_trainable == net.pau_trainable);
    std::filesystem::remove(path);
}
