#pragma once

#include <cstddef>

namespace rail::nn::kernels {

// The dense kernels exist in two variants: a plain serial reference and an
// OpenMP version parallelized over independent output elements. Each output
// element is accumulated sequentially by a single thread in both variants,
// so the parallel results are bit-identical to the serial ones for any
// thread count. Tests assert exact equality; bench_kernels compares speed.
enum class Mode { Serial, Parallel };

void set_mode(Mode m);
Mode mode();

// Z[B x out] = X[B x in] * W^T + b, with W row-major [out x in].
void affine_forward(const double* X, int B, const double* W, const double* b, int in, int out,
                    double* Z);

// dX[B x in] = dZ[B x out] * W
void affine_backward_data(const double* dZ, int B, const double* W, int in, int out, double* dX);

// dW[out x in] = dZ^T * X, db[out] = column sums of dZ
void affine_backward_params(const double* dZ, const double* X, int B, int in, int out, double* dW,
                            double* db);

// Serial reference implementations (always available, used by tests/bench).
namespace serial {
void affine_forward(const double* X, int B, const double* W, const double* b, int in, int out,
                    double* Z);
void affine_backward_data(const double* dZ, int B, const double* W, int in, int out, double* dX);
void affine_backward_params(const double* dZ, const double* X, int B, int in, int out, double* dW,
                            double* db);
}  // namespace serial

}  // namespace rail::nn::kernels
