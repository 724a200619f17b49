#include "rail/kernels.hpp"

#include <atomic>

namespace rail::nn::kernels {

namespace {
std::atomic<Mode> g_mode{
#ifdef _OPENMP
    Mode::Parallel
#else
    Mode::Serial
#endif
};
}  // namespace

void set_mode(Mode m) { g_mode.store(m, std::memory_order_relaxed); }
Mode mode() { return g_mode.load(std::memory_order_relaxed); }

namespace serial {

void affine_forward(const double* X, int B, const double* W, const double* b, int in, int out,
                    double* Z) {
    for (int r = 0; r < B; ++r) {
        const double* x = X + std::size_t(r) * in;
        double* z = Z + std::size_t(r) * out;
        for (int o = 0; o < out; ++o) {
            const double* w = W + std::size_t(o) * in;
            double acc = b[o];
            for (int i = 0; i < in; ++i) acc += w[i] * x[i];
            z[o] = acc;
        }
    }
}

void affine_backward_data(const double* dZ, int B, const double* W, int in, int out, double* dX) {
    for (int r = 0; r < B; ++r) {
        const double* dz = dZ + std::size_t(r) * out;
        double* dx = dX + std::size_t(r) * in;
        for (int i = 0; i < in; ++i) dx[i] = 0.0;
        for (int o = 0; o < out; ++o) {
            const double g = dz[o];
            if (g == 0.0) continue;
            const double* w = W + std::size_t(o) * in;
            for (int i = 0; i < in; ++i) dx[i] += g * w[i];
        }
    }
}

void affine_backward_params(const double* dZ, const double* X, int B, int in, int out, double* dW,
                            double* db) {
    for (int o = 0; o < out; ++o) {
        double* dw = dW + std::size_t(o) * in;
        for (int i = 0; i < in; ++i) dw[i] = 0.0;
        double acc = 0.0;
        for (int r = 0; r < B; ++r) {
            const double g = dZ[std::size_t(r) * out + o];
            acc += g;
            if (g == 0.0) continue;
            const double* x = X + std::size_t(r) * in;
            for (int i = 0; i < in; ++i) dw[i] += g * x[i];
        }
        db[o] = acc;
    }
}

}  // namespace serial

void affine_forward(const double* X, int B, const double* W, const double* b, int in, int out,
                    double* Z) {
    if (mode() == Mode::Serial) {
        serial::affine_forward(X, B, W, b, in, out, Z);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int r = 0; r < B; ++r) {
        const double* x = X + std::size_t(r) * in;
        double* z = Z + std::size_t(r) * out;
        for (int o = 0; o < out; ++o) {
            const double* w = W + std::size_t(o) * in;
            double acc = b[o];
            for (int i = 0; i < in; ++i) acc += w[i] * x[i];
            z[o] = acc;
        }
    }
}

void affine_backward_data(const double* dZ, int B, const double* W, int in, int out, double* dX) {
    if (mode() == Mode::Serial) {
        serial::affine_backward_data(dZ, B, W, in, out, dX);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int r = 0; r < B; ++r) {
        const double* dz = dZ + std::size_t(r) * out;
        double* dx = dX + std::size_t(r) * in;
        for (int i = 0; i < in; ++i) dx[i] = 0.0;
        for (int o = 0; o < out; ++o) {
            const double g = dz[o];
            if (g == 0.0) continue;
            const double* w = W + std::size_t(o) * in;
            for (int i = 0; i < in; ++i) dx[i] += g * w[i];
        }
    }
}

void affine_backward_params(const double* dZ, const double* X, int B, int in, int out, double* dW,
                            double* db) {
    if (mode() == Mode::Serial) {
        serial::affine_backward_params(dZ, X, B, in, out, dW, db);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int o = 0; o < out; ++o) {
        double* dw = dW + std::size_t(o) * in;
        for (int i = 0; i < in; ++i) dw[i] = 0.0;
        double acc = 0.0;
        for (int r = 0; r < B; ++r) {
            const double g = dZ[std::size_t(r) * out + o];
            acc += g;
            if (g == 0.0) continue;
            const double* x = X + std::size_t(r) * in;
            for (int i = 0; i < in; ++i) dw[i] += g * x[i];
        }
        db[o] = acc;
    }
}

}  // namespace rail::nn::kernels
