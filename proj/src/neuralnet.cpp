#include "rail/neuralnet.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "rail/kernels.hpp"
#include "rail/rng.hpp"

namespace rail::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes little-endian doubles");

const std::array<double, kPauNumCoeffs> kPauReluNum = {
    0.0339024610764, 0.499991387843, 1.66983317019, 1.98941385834, 0.94083071821, 0.150812413065};
const std::array<double, kPauDenCoeffs> kPauReluDen = {-8.33537104773e-05, 3.97894476229,
                                                       -6.06977228637e-05, 0.301635138425};

double pau_forward(std::span<const double, kPauNumCoeffs> a,
                   std::span<const double, kPauDenCoeffs> b, double x) {
    // Horner for P(x) = a0 + a1 x + ... + a5 x^5 and Q(x) = b1 x + ... + b4 x^4.
    double p = a[5];
    for (int j = 4; j >= 0; --j) p = p * x + a[j];
    double q = b[3];
    for (int k = 2; k >= 0; --k) q = q * x + b[k];
    q *= x;
    return p / (1.0 + std::abs(q));
}

PauGrad pau_backward(std::span<const double, kPauNumCoeffs> a,
                     std::span<const double, kPauDenCoeffs> b, double x, double upstream) {
    double xp[6];  // x^0..x^5
    xp[0] = 1.0;
    for (int j = 1; j < 6; ++j) xp[j] = xp[j - 1] * x;

    double p = 0.0, dp = 0.0;
    for (int j = 0; j < 6; ++j) p += a[j] * xp[j];
    for (int j = 1; j < 6; ++j) dp += j * a[j] * xp[j - 1];
    double q = 0.0, dq = 0.0;
    for (int k = 1; k <= 4; ++k) q += b[k - 1] * xp[k];
    for (int k = 1; k <= 4; ++k) dq += k * b[k - 1] * xp[k - 1];

    const double sgn = q > 0.0 ? 1.0 : (q < 0.0 ? -1.0 : 0.0);
    const double denom = 1.0 + std::abs(q);
    const double inv = 1.0 / denom;
    const double inv2 = inv * inv;

    PauGrad g;
    g.dx = upstream * (dp * inv - p * sgn * dq * inv2);
    for (int j = 0; j < 6; ++j) g.da[j] = upstream * xp[j] * inv;
    for (int k = 1; k <= 4; ++k) g.db[k - 1] = upstream * (-p * sgn * xp[k] * inv2);
    return g;
}

QNetwork mlp_init(int d_in, std::vector<int> hidden, int d_out, const ActivationSpec& act,
                  std::uint64_t seed) {
    if (d_in < 1 || d_out < 1) throw std::invalid_argument("layer sizes must be >= 1");
    for (int h : hidden)
        if (h < 1) throw std::invalid_argument("layer sizes must be >= 1");

    QNetwork net;
    net.d_in = d_in;
    net.hidden = std::move(hidden);
    net.d_out = d_out;
    net.act_kind = act.kind;
    net.pau_trainable = act.kind == ActivationKind::Pau && act.trainable;

    std::vector<int> dims{d_in};
    dims.insert(dims.end(), net.hidden.begin(), net.hidden.end());
    dims.push_back(d_out);

    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        QNetwork::LayerView v;
        v.in = dims[l];
        v.out = dims[l + 1];
        v.w_off = off;
        off += std::size_t(v.in) * v.out;
        v.b_off = off;
        off += std::size_t(v.out);
        net.layers.push_back(v);
    }
    net.weights_end = off;
    if (net.act_kind == ActivationKind::Pau) off += std::size_t(net.num_hidden()) * kPauCoeffs;
    net.params.assign(off, 0.0);

    Rng rng(mix_seed(seed, 0x6e6574));
    for (int l = 0; l < net.num_layers(); ++l) {
        const double bound = std::sqrt(1.0 / net.layers[l].in);
        for (double& w : net.w(l)) w = (rng.uniform_real() * 2.0 - 1.0) * bound;
        // biases stay zero
    }
    if (net.act_kind == ActivationKind::Pau) {
        for (int l = 0; l < net.num_hidden(); ++l) {
            std::copy(act.num.begin(), act.num.end(), net.pau_a(l).begin());
            std::copy(act.den.begin(), act.den.end(), net.pau_b(l).begin());
        }
    }
    return net;
}

void forward_batch(const QNetwork& net, const double* X, int B, double* Q, ForwardCache* cache) {
    if (B < 1) throw NnError(NnError::Code::DimMismatch, "DIM_MISMATCH: empty batch");
    const int L = net.num_layers();
    if (cache) {
        cache->batch = B;
        cache->revision = net.revision;
        cache->inputs.assign(L, {});
        cache->preacts.assign(L, {});
    }

    std::vector<double> cur(X, X + std::size_t(B) * net.d_in);
    std::vector<double> nxt;
    for (int l = 0; l < L; ++l) {
        const auto& lv = net.layers[l];
        if (cache) cache->inputs[l] = cur;
        nxt.assign(std::size_t(B) * lv.out, 0.0);
        kernels::affine_forward(cur.data(), B, net.params.data() + lv.w_off,
                                net.params.data() + lv.b_off, lv.in, lv.out, nxt.data());
        if (cache) cache->preacts[l] = nxt;
        if (l + 1 < L) {
            if (net.act_kind == ActivationKind::Rectifier) {
                for (double& v : nxt) v = v > 0.0 ? v : 0.0;
            } else {
                auto a = net.pau_a(l);
                auto b = net.pau_b(l);
                for (double& v : nxt) v = pau_forward(a, b, v);
            }
        }
        cur.swap(nxt);
    }
    std::memcpy(Q, cur.data(), std::size_t(B) * net.d_out * sizeof(double));
}

std::vector<double> forward(const QNetwork& net, std::span<const double> x, ForwardCache* cache) {
    if (int(x.size()) != net.d_in)
        throw NnError(NnError::Code::DimMismatch,
                      "DIM_MISMATCH: input size " + std::to_string(x.size()) + " != " +
                          std::to_string(net.d_in));
    std::vector<double> q(net.d_out);
    forward_batch(net, x.data(), 1, q.data(), cache);
    return q;
}

Gradients backward(const QNetwork& net, const ForwardCache& cache, std::span<const double> dLdq) {
    if (cache.revision != net.revision)
        throw NnError(NnError::Code::StaleCache, "STALE_CACHE: parameters changed since forward");
    const int B = cache.batch;
    const int L = net.num_layers();
    if (int(dLdq.size()) != B * net.d_out)
        throw NnError(NnError::Code::ShapeMismatch, "SHAPE_MISMATCH: upstream gradient size");

    Gradients g;
    g.flat.assign(net.params.size(), 0.0);

    std::vector<double> dZ(dLdq.begin(), dLdq.end());
    std::vector<double> dX;
    for (int l = L - 1; l >= 0; --l) {
        const auto& lv = net.layers[l];
        kernels::affine_backward_params(dZ.data(), cache.inputs[l].data(), B, lv.in, lv.out,
                                        g.flat.data() + lv.w_off, g.flat.data() + lv.b_off);
        if (l == 0) break;
        dX.assign(std::size_t(B) * lv.in, 0.0);
        kernels::affine_backward_data(dZ.data(), B, net.params.data() + lv.w_off, lv.in, lv.out,
                                      dX.data());
        // Through the activation of layer l-1.
        const auto& z = cache.preacts[l - 1];
        dZ.assign(z.size(), 0.0);
        if (net.act_kind == ActivationKind::Rectifier) {
            for (std::size_t i = 0; i < z.size(); ++i) dZ[i] = z[i] > 0.0 ? dX[i] : 0.0;
        } else {
            auto a = net.pau_a(l - 1);
            auto b = net.pau_b(l - 1);
            double* da = net.pau_trainable ? g.flat.data() + net.pau_off(l - 1) : nullptr;
            for (std::size_t i = 0; i < z.size(); ++i) {
                PauGrad pg = pau_backward(a, b, z[i], dX[i]);
                dZ[i] = pg.dx;
                if (da) {
                    for (int j = 0; j < kPauNumCoeffs; ++j) da[j] += pg.da[j];
                    for (int k = 0; k < kPauDenCoeffs; ++k) da[kPauNumCoeffs + k] += pg.db[k];
                }
            }
        }
    }
    return g;
}

void adam_step(QNetwork& net, const Gradients& grads, OptState& opt) {
    if (grads.flat.size() != net.params.size())
        throw NnError(NnError::Code::ShapeMismatch, "SHAPE_MISMATCH: gradient/parameter sizes");
    if (opt.m.empty()) {
        opt.m.assign(net.params.size(), 0.0);
        opt.v.assign(net.params.size(), 0.0);
    }
    if (opt.m.size() != net.params.size())
        throw NnError(NnError::Code::ShapeMismatch, "SHAPE_MISMATCH: optimizer state size");

    ++opt.step;
    const double c1 = 1.0 - std::pow(opt.beta1, double(opt.step));
    const double c2 = 1.0 - std::pow(opt.beta2, double(opt.step));
    const std::size_t end = net.trainable_end();
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < (long long)end; ++i) {
        const double gi = grads.flat[i];
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * gi;
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * gi * gi;
        const double mhat = opt.m[i] / c1;
        const double vhat = opt.v[i] / c2;
        net.params[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
    ++net.revision;
}

std::vector<double> average_weights(const std::vector<const QNetwork*>& nets,
                                    std::span<const double> coeffs) {
    if (nets.empty() || coeffs.size() != nets.size())
        throw NnError(NnError::Code::Incongruent, "INCONGRUENT: anchor/coefficient counts");
    const QNetwork& first = *nets[0];
    for (const QNetwork* n : nets)
        if (!n->congruent_with(first))
            throw NnError(NnError::Code::Incongruent, "INCONGRUENT: architectures differ");

    const double inv_j = 1.0 / double(nets.size());
    std::vector<double> out(first.params.size(), 0.0);
    for (std::size_t k = 0; k < nets.size(); ++k) {
        const double c = coeffs[k] * inv_j;
        const auto& p = nets[k]->params;
        for (std::size_t i = 0; i < first.weights_end; ++i) out[i] += c * p[i];
    }
    if (first.act_kind == ActivationKind::Pau) {
        for (int l = 0; l < first.num_hidden(); ++l) {
            std::size_t off = first.pau_off(l);
            for (int j = 0; j < kPauNumCoeffs; ++j) out[off + j] = kPauReluNum[j];
            for (int k = 0; k < kPauDenCoeffs; ++k) out[off + kPauNumCoeffs + k] = kPauReluDen[k];
        }
    }
    return out;
}

void save_network(const QNetwork& net, const std::string& path) {
    nlohmann::json header{
        {"d_in", net.d_in},
        {"hidden", net.hidden},
        {"d_out", net.d_out},
        {"activation", net.act_kind == ActivationKind::Pau ? "pau" : "rectifier"},
        {"pau_trainable", net.pau_trainable},
        {"param_count", net.params.size()},
    };
    std::ofstream out(path, std::ios::binary);
    if (!out) throw NnError(NnError::Code::BadCheckpoint, "cannot open " + path);
    out << "RAILNET 1\n" << header.dump() << "\n";
    out.write(reinterpret_cast<const char*>(net.params.data()),
              std::streamsize(net.params.size() * sizeof(double)));
    if (!out) throw NnError(NnError::Code::BadCheckpoint, "short write to " + path);
}

QNetwork load_network(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NnError(NnError::Code::BadCheckpoint, "cannot open " + path);
    std::string magic, header_line;
    std::getline(in, magic);
    if (magic != "RAILNET 1")
        throw NnError(NnError::Code::BadCheckpoint, "bad checkpoint magic in " + path);
    std::getline(in, header_line);
    nlohmann::json header = nlohmann::json::parse(header_line, nullptr, false);
    if (header.is_discarded())
        throw NnError(NnError::Code::BadCheckpoint, "bad checkpoint header in " + path);

    ActivationSpec act = header.at("activation") == "pau"
                             ? ActivationSpec::pau_relu_init(header.at("pau_trainable").get<bool>())
                             : ActivationSpec::rectifier();
    QNetwork net = mlp_init(header.at("d_in"), header.at("hidden").get<std::vector<int>>(),
                            header.at("d_out"), act, 0);
    std::size_t count = header.at("param_count");
    if (count != net.params.size())
        throw NnError(NnError::Code::BadCheckpoint, "parameter count mismatch in " + path);
    in.read(reinterpret_cast<char*>(net.params.data()), std::streamsize(count * sizeof(double)));
    if (std::size_t(in.gcount()) != count * sizeof(double))
        throw NnError(NnError::Code::BadCheckpoint, "truncated checkpoint " + path);
    return net;
}

}  // namespace rail::nn
