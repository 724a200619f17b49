// Benchmark comparing the serial reference kernels with the OpenMP variants
// at the production network shape, and verifying the results are bit-equal.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <vector>

#include "rail/kernels.hpp"
#include "rail/rng.hpp"

using namespace rail;
using clock_type = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    auto t0 = clock_type::now();
    for (int r = 0; r < reps; ++r) fn();
    auto t1 = clock_type::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
    int B = 128, in = 1024, out = 1024, reps = 20;
    if (argc > 1) reps = std::atoi(argv[1]);

    Rng rng(7);
    std::vector<double> X(std::size_t(B) * in), W(std::size_t(out) * in), b(out);
    std::vector<double> dZ(std::size_t(B) * out);
    for (double& v : X) v = rng.uniform_real() - 0.5;
    for (double& v : W) v = rng.uniform_real() - 0.5;
    for (double& v : b) v = rng.uniform_real() - 0.5;
    for (double& v : dZ) v = rng.uniform_real() - 0.5;

    std::vector<double> Zs(std::size_t(B) * out), Zp(Zs.size());
    std::vector<double> dXs(std::size_t(B) * in), dXp(dXs.size());
    std::vector<double> dWs(W.size()), dWp(W.size()), dbs(out), dbp(out);

    struct Row {
        const char* name;
        double serial_ms, parallel_ms;
        bool equal;
    };
    std::vector<Row> rows;

    nn::kernels::set_mode(nn::kernels::Mode::Parallel);
    {
        double ts = time_ms([&] { nn::kernels::serial::affine_forward(X.data(), B, W.data(), b.data(), in, out, Zs.data()); }, reps);
        double tp = time_ms([&] { nn::kernels::affine_forward(X.data(), B, W.data(), b.data(), in, out, Zp.data()); }, reps);
        rows.push_back({"affine_forward", ts, tp,
                        std::memcmp(Zs.data(), Zp.data(), Zs.size() * sizeof(double)) == 0});
    }
    {
        double ts = time_ms([&] { nn::kernels::serial::affine_backward_data(dZ.data(), B, W.data(), in, out, dXs.data()); }, reps);
        double tp = time_ms([&] { nn::kernels::affine_backward_data(dZ.data(), B, W.data(), in, out, dXp.data()); }, reps);
        rows.push_back({"affine_backward_data", ts, tp,
                        std::memcmp(dXs.data(), dXp.data(), dXs.size() * sizeof(double)) == 0});
    }
    {
        double ts = time_ms([&] { nn::kernels::serial::affine_backward_params(dZ.data(), X.data(), B, in, out, dWs.data(), dbs.data()); }, reps);
        double tp = time_ms([&] { nn::kernels::affine_backward_params(dZ.data(), X.data(), B, in, out, dWp.data(), dbp.data()); }, reps);
        rows.push_back({"affine_backward_params", ts, tp,
                        std::memcmp(dWs.data(), dWp.data(), dWs.size() * sizeof(double)) == 0 &&
                            std::memcmp(dbs.data(), dbp.data(), dbs.size() * sizeof(double)) == 0});
    }

    std::printf("kernel benchmark: B=%d in=%d out=%d reps=%d\n", B, in, out, reps);
    std::printf("%-24s %12s %12s %9s %s\n", "kernel", "serial ms", "parallel ms", "speedup",
                "bit-equal");
    bool all_equal = true;
    for (const Row& r : rows) {
        std::printf("%-24s %12.3f %12.3f %8.2fx %s\n", r.name, r.serial_ms, r.parallel_ms,
                    r.serial_ms / r.parallel_ms, r.equal ? "yes" : "NO");
        all_equal = all_equal && r.equal;
    }
    return all_equal ? 0 : 1;
}
