#include <cstring>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "rail/kernels.hpp"
#include "rail/rng.hpp"

using namespace rail;
namespace k = nn::kernels;

namespace {

struct ModeGuard {
    k::Mode saved = k::mode();
    ~ModeGuard() { k::set_mode(saved); }
};

}  // namespace

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
    ModeGuard guard;
    Rng rng(11);
    const std::tuple<int, int, int> shapes[] = {{1, 1, 1}, {3, 5, 7}, {17, 33, 9}, {64, 128, 64}};
    for (auto [B, in, out] : shapes) {
        std::vector<double> X(std::size_t(B) * in), W(std::size_t(out) * in), b(out),
            dZ(std::size_t(B) * out);
        for (double& v : X) v = rng.uniform_real() * 2 - 1;
        for (double& v : W) v = rng.uniform_real() * 2 - 1;
        for (double& v : b) v = rng.uniform_real() * 2 - 1;
        for (double& v : dZ) v = rng.uniform_real() * 2 - 1;

        std::vector<double> Zs(std::size_t(B) * out), Zp(Zs.size());
        k::serial::affine_forward(X.data(), B, W.data(), b.data(), in, out, Zs.data());
        k::set_mode(k::Mode::Parallel);
        k::affine_forward(X.data(), B, W.data(), b.data(), in, out, Zp.data());
        CHECK(std::memcmp(Zs.data(), Zp.data(), Zs.size() * sizeof(double)) == 0);

        std::vector<double> dXs(std::size_t(B) * in), dXp(dXs.size());
        k::serial::affine_backward_data(dZ.data(), B, W.data(), in, out, dXs.data());
        k::affine_backward_data(dZ.data(), B, W.data(), in, out, dXp.data());
        CHECK(std::memcmp(dXs.data(), dXp.data(), dXs.size() * sizeof(double)) == 0);

        std::vector<double> dWs(W.size()), dWp(W.size()), dbs(out), dbp(out);
        k::serial::affine_backward_params(dZ.data(), X.data(), B, in, out, dWs.data(), dbs.data());
        k::affine_backward_params(dZ.data(), X.data(), B, in, out, dWp.data(), dbp.data());
        CHECK(std::memcmp(dWs.data(), dWp.data(), dWs.size() * sizeof(double)) == 0);
        CHECK(std::memcmp(dbs.data(), dbp.data(), dbs.size() * sizeof(double)) == 0);
    }
}

TEST_CASE("forward kernel matches a hand-computed product") {
    ModeGuard guard;
    k::set_mode(k::Mode::Serial);
    // 2x2 input, W = [[1,2],[3,4],[5,6]] (3 outputs), b = [1,1,1]
    const double X[4] = {1, 2, 3, 4};
    const double W[6] = {1, 2, 3, 4, 5, 6};
    const double b[3] = {1, 1, 1};
    double Z[6];
    k::affine_forward(X, 2, W, b, 2, 3, Z);
    CHECK(Z[0] == 6.0);   // 1*1+2*2+1
    CHECK(Z[1] == 12.0);  // 3*1+4*2+1
    CHECK(Z[2] == 18.0);
    CHECK(Z[3] == 12.0);  // 1*3+2*4+1
    CHECK(Z[4] == 26.0);
    CHECK(Z[5] == 40.0);
}
