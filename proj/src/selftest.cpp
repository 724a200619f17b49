#include <cmath>
#include <iomanip>
#include <ostream>

#include "rail/harness.hpp"

namespace rail::harness {

namespace {

bool expect(std::ostream& out, bool ok, const std::string& what) {
    out << (ok ? "ok" : "FAIL") << "  " << what << "\n";
    return ok;
}

double rel_err(double got, double want) {
    return std::abs(got - want) / std::max({std::abs(got), std::abs(want), 1e-8});
}

// Central finite differences of a PAU evaluation against the analytic grads.
bool pau_gradient_suite(std::ostream& out) {
    Rng rng(41);
    const double h = 1e-5;
    int failures = 0;
    for (int trial = 0; trial < 50; ++trial) {
        std::array<double, nn::kPauNumCoeffs> a;
        std::array<double, nn::kPauDenCoeffs> b;
        for (double& v : a) v = rng.uniform_real() * 2.0 - 1.0;
        for (double& v : b) v = rng.uniform_real() * 2.0 - 1.0;
        double x = rng.uniform_real() * 6.0 - 3.0;
        nn::PauGrad g = nn::pau_backward(a, b, x, 1.0);

        auto fd_x = (nn::pau_forward(a, b, x + h) - nn::pau_forward(a, b, x - h)) / (2 * h);
        if (rel_err(g.dx, fd_x) > 1e-4) ++failures;
        for (int j = 0; j < nn::kPauNumCoeffs; ++j) {
            auto ap = a, am = a;
            ap[j] += h;
            am[j] -= h;
            double fd = (nn::pau_forward(ap, b, x) - nn::pau_forward(am, b, x)) / (2 * h);
            if (rel_err(g.da[j], fd) > 1e-4) ++failures;
        }
        for (int k = 0; k < nn::kPauDenCoeffs; ++k) {
            auto bp = b, bm = b;
            bp[k] += h;
            bm[k] -= h;
            double fd = (nn::pau_forward(a, bp, x) - nn::pau_forward(a, bm, x)) / (2 * h);
            if (rel_err(g.db[k], fd) > 1e-4) ++failures;
        }
    }
    return expect(out, failures == 0, "pau gradients vs central differences (50 triples)");
}

bool backprop_suite(std::ostream& out) {
    Rng rng(43);
    const double h = 1e-5;
    int failures = 0;
    for (int trial = 0; trial < 5; ++trial) {
        const bool pau = trial % 2 == 0;
        nn::QNetwork net = nn::mlp_init(3, {5, 4}, 3,
                                        pau ? nn::ActivationSpec::pau_relu_init(true)
                                            : nn::ActivationSpec::rectifier(),
                                        100 + trial);
        std::vector<double> x(3), w(3);
        for (double& v : x) v = rng.uniform_real() * 2.0 - 1.0;
        for (double& v : w) v = rng.uniform_real() * 2.0 - 1.0;
        auto loss = [&](const nn::QNetwork& n) {
            std::vector<double> q = nn::forward(n, x);
            double s = 0.0;
            for (int i = 0; i < 3; ++i) s += w[i] * q[i];
            return s;
        };
        nn::ForwardCache cache;
        nn::forward(net, x, &cache);
        nn::Gradients g = nn::backward(net, cache, w);
        for (std::size_t p = 0; p < net.params.size(); p += 7) {  // sampled coordinates
            nn::QNetwork np = net, nm = net;
            np.params[p] += h;
            nm.params[p] -= h;
            double fd = (loss(np) - loss(nm)) / (2 * h);
            bool trainable = p < net.trainable_end();
            double analytic = trainable ? g.flat[p] : 0.0;
            if (trainable && rel_err(analytic, fd) > 1e-4 && std::abs(analytic - fd) > 1e-7)
                ++failures;
        }
    }
    return expect(out, failures == 0, "backprop vs central differences (5 small nets)");
}

bool ewc_suite(std::ostream& out) {
    Rng rng(47);
    bool ok = true;
    for (int trial = 0; trial < 50; ++trial) {
        nn::QNetwork net = nn::mlp_init(2, {3}, 2, nn::ActivationSpec::rectifier(), 200 + trial);
        cl::Consolidation c;
        c.theta_star = net.params;
        c.fisher.resize(net.params.size());
        for (double& f : c.fisher) f = rng.uniform_real() * 3.0;
        const double lambda = 0.5;
        std::size_t j = rng.bounded(net.params.size());
        double delta = rng.uniform_real() * 4.0 - 2.0;
        net.params[j] += delta;
        double penalty = cl::ewc_penalty(net, {c}, lambda);
        double want = 0.5 * lambda * c.fisher[j] * delta * delta;
        if (rel_err(penalty, want) > 1e-10 && std::abs(penalty - want) > 1e-14) ok = false;
    }
    return expect(out, ok, "ewc penalty quadratic law (50 perturbations)");
}

bool epsilon_suite(std::ostream& out) {
    bool ok = dqn::epsilon(0) == 1.0;
    ok = ok && std::abs(dqn::epsilon(138629) - 0.5) < 1e-3;
    double prev = 1.0;
    for (std::int64_t s = 1; s <= 1000000; s += 9973) {
        double e = dqn::epsilon(s);
        if (e >= prev) ok = false;
        prev = e;
    }
    return expect(out, ok, "epsilon schedule (initial, midpoint, monotone)");
}

bool deadlock_suite(std::ostream& out) {
    bool ok = true;
    {
        sim::EnvState s = make_head_on_scenario();
        ok = ok && sim::detect_deadlocks(s) == std::vector<int>{0, 1};
    }
    {
        sim::EnvState s = make_cycle_scenario();
        ok = ok && sim::detect_deadlocks(s) == std::vector<int>{0, 1, 2, 3};
    }
    {
        sim::EnvState s = make_head_on_scenario();
        s.trains.pop_back();  // lone train, free path
        ok = ok && sim::detect_deadlocks(s).empty();
    }
    return expect(out, ok, "deadlock detection on constructed scenarios");
}

bool buffer_suite(std::ostream& out) {
    bool ok = true;
    dqn::ReplayBuffer buf(4);
    Rng rng(53);
    for (int i = 0; i < 6; ++i) buf.push({{double(i)}, 0, 0.0, {0.0}, false});
    ok = ok && buf.size() == 4;
    ok = ok && buf.at(0).s[0] == 4.0;  // oldest evicted
    bool threw = false;
    try {
        buf.sample(5, rng);
    } catch (const dqn::DqnError&) {
        threw = true;
    }
    ok = ok && threw;
    buf.reset();
    ok = ok && buf.size() == 0;
    return expect(out, ok, "replay buffer ring semantics");
}

}  // namespace

bool selftest(std::ostream& out) {
    out << "railcde selftest\n";
    bool ok = true;
    ok &= pau_gradient_suite(out);
    ok &= backprop_suite(out);
    ok &= ewc_suite(out);
    ok &= epsilon_suite(out);
    ok &= deadlock_suite(out);
    ok &= buffer_suite(out);
    out << (ok ? "all suites passed" : "SELFTEST FAILED") << "\n";
    return ok;
}

}  // namespace rail::harness
