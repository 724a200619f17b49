#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rail::nn {

class NnError : public std::runtime_error {
public:
    enum class Code { DimMismatch, ShapeMismatch, StaleCache, Incongruent, BadCheckpoint };
    NnError(Code code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

enum class ActivationKind : std::uint8_t { Rectifier, Pau };

inline constexpr int kPauNumCoeffs = 6;  // a_0..a_5
inline constexpr int kPauDenCoeffs = 4;  // b_1..b_4
inline constexpr int kPauCoeffs = kPauNumCoeffs + kPauDenCoeffs;

// Coefficients of the degree-(5,4) safe rational fitted to max(0,x) on
// [-3,3]; max absolute error 0.034 over the fit range.
extern const std::array<double, kPauNumCoeffs> kPauReluNum;
extern const std::array<double, kPauDenCoeffs> kPauReluDen;

struct ActivationSpec {
    ActivationKind kind = ActivationKind::Rectifier;
    std::array<double, kPauNumCoeffs> num{};
    std::array<double, kPauDenCoeffs> den{};
    bool trainable = false;

    static ActivationSpec rectifier() { return {}; }
    static ActivationSpec pau_relu_init(bool trainable = true) {
        return {ActivationKind::Pau, kPauReluNum, kPauReluDen, trainable};
    }
};

// Safe rational activation: R(x) = sum_j a_j x^j / (1 + |sum_k b_k x^k|).
// The absolute value keeps the denominator >= 1, so R is pole-free and
// finite for every finite x.
double pau_forward(std::span<const double, kPauNumCoeffs> a,
                   std::span<const double, kPauDenCoeffs> b, double x);

struct PauGrad {
    double dx = 0.0;
    std::array<double, kPauNumCoeffs> da{};
    std::array<double, kPauDenCoeffs> db{};
};

// Analytic derivatives of the safe variant; sign(0) is taken as 0.
PauGrad pau_backward(std::span<const double, kPauNumCoeffs> a,
                     std::span<const double, kPauDenCoeffs> b, double x, double upstream);

// Dense Q-network. All parameters live in one flat vector: per layer the
// row-major weight block then the bias block, followed (for PAU nets) by one
// (a, b) coefficient set per hidden layer. That flattening order is the
// checkpoint and consolidation layout and must stay stable.
struct QNetwork {
    struct LayerView {
        std::size_t w_off = 0, b_off = 0;
        int in = 0, out = 0;
    };

    int d_in = 0;
    std::vector<int> hidden;
    int d_out = 0;
    ActivationKind act_kind = ActivationKind::Rectifier;
    bool pau_trainable = false;
    std::vector<double> params;
    std::vector<LayerView> layers;
    std::size_t weights_end = 0;  // weights+biases prefix; PAU coefficients follow
    std::uint64_t revision = 0;   // bumped on every parameter update

    int num_layers() const { return int(layers.size()); }
    int num_hidden() const { return int(hidden.size()); }
    std::span<double> w(int l) {
        return {params.data() + layers[l].w_off, std::size_t(layers[l].in) * layers[l].out};
    }
    std::span<const double> w(int l) const {
        return {params.data() + layers[l].w_off, std::size_t(layers[l].in) * layers[l].out};
    }
    std::span<double> b(int l) { return {params.data() + layers[l].b_off, std::size_t(layers[l].out)}; }
    std::span<const double> b(int l) const {
        return {params.data() + layers[l].b_off, std::size_t(layers[l].out)};
    }
    std::size_t pau_off(int hidden_layer) const {
        return weights_end + std::size_t(hidden_layer) * kPauCoeffs;
    }
    std::span<double, kPauNumCoeffs> pau_a(int l) {
        return std::span<double, kPauNumCoeffs>(params.data() + pau_off(l), kPauNumCoeffs);
    }
    std::span<const double, kPauNumCoeffs> pau_a(int l) const {
        return std::span<const double, kPauNumCoeffs>(params.data() + pau_off(l), kPauNumCoeffs);
    }
    std::span<double, kPauDenCoeffs> pau_b(int l) {
        return std::span<double, kPauDenCoeffs>(params.data() + pau_off(l) + kPauNumCoeffs,
                                                kPauDenCoeffs);
    }
    std::span<const double, kPauDenCoeffs> pau_b(int l) const {
        return std::span<const double, kPauDenCoeffs>(params.data() + pau_off(l) + kPauNumCoeffs,
                                                      kPauDenCoeffs);
    }
    // Number of leading parameters touched by optimizer updates.
    std::size_t trainable_end() const {
        return (act_kind == ActivationKind::Pau && pau_trainable) ? params.size() : weights_end;
    }
    bool congruent_with(const QNetwork& o) const {
        return d_in == o.d_in && hidden == o.hidden && d_out == o.d_out && act_kind == o.act_kind;
    }
};

// Weights uniform in +-sqrt(1/fan_in), biases zero; PAU layers start from the
// spec's coefficients (the ReLU fit by default).
QNetwork mlp_init(int d_in, std::vector<int> hidden, int d_out, const ActivationSpec& act,
                  std::uint64_t seed);

struct Gradients {
    std::vector<double> flat;
};

struct ForwardCache {
    int batch = 0;
    std::uint64_t revision = 0;
    std::vector<std::vector<double>> inputs;   // per layer, B x in
    std::vector<std::vector<double>> preacts;  // per layer, B x out
};

// Batched forward pass; X is row-major B x d_in, Q is filled B x d_out.
void forward_batch(const QNetwork& net, const double* X, int B, double* Q,
                   ForwardCache* cache = nullptr);
std::vector<double> forward(const QNetwork& net, std::span<const double> x,
                            ForwardCache* cache = nullptr);

// Exact gradients of a scalar loss with upstream dL/dq (row-major B x d_out)
// w.r.t. every trainable parameter. Frozen PAU entries come back zero.
Gradients backward(const QNetwork& net, const ForwardCache& cache, std::span<const double> dLdq);

struct OptState {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::vector<double> m, v;
};

// Bias-corrected Adam over the trainable prefix of the parameter vector.
void adam_step(QNetwork& net, const Gradients& grads, OptState& opt);

// (1/j) * sum_i coeffs[i] * params_i over the weight/bias prefix, j = #nets.
// PAU coefficients of the result are reset to the ReLU-fit initialization.
std::vector<double> average_weights(const std::vector<const QNetwork*>& nets,
                                    std::span<const double> coeffs);

// Checkpoints: text header (magic, version, architecture JSON) followed by
// the raw little-endian parameter block.
void save_network(const QNetwork& net, const std::string& path);
QNetwork load_network(const std::string& path);

}  // namespace rail::nn
