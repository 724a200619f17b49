#include "rail/dqn.hpp"

#include <cmath>

namespace rail::dqn {

void ReplayBuffer::push(Transition t) {
    if (data_.size() < cap_) {
        data_.push_back(std::move(t));
    } else {
        data_[cursor_] = std::move(t);
    }
    cursor_ = (cursor_ + 1) % cap_;
}

std::vector<Transition> ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
    if (data_.size() < batch)
        throw DqnError(DqnError::Code::Underfull,
                       "UNDERFULL: buffer holds " + std::to_string(data_.size()) +
                           " transitions, batch needs " + std::to_string(batch));
    std::vector<Transition> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) out.push_back(data_[rng.bounded(data_.size())]);
    return out;
}

double epsilon(std::int64_t step) { return std::pow(1.000005, -double(step)); }

int greedy_action(const nn::QNetwork& net, std::span<const double> obs) {
    std::vector<double> q = nn::forward(net, obs);
    int best = 0;
    for (int a = 1; a < int(q.size()); ++a)
        if (q[a] > q[best]) best = a;
    return best;
}

int select_action(const nn::QNetwork& net, std::span<const double> obs, double eps, Rng& rng) {
    if (rng.uniform_real() < eps) return rng.uniform_int(0, net.d_out - 1);
    return greedy_action(net, obs);
}

double td_update(nn::QNetwork& net, nn::QNetwork* target, const std::vector<Transition>& batch,
                 const DqnConfig& cfg, nn::OptState& opt, const EwcHook* hook) {
    const int B = int(batch.size());
    if (B < 1) throw DqnError(DqnError::Code::ShapeMismatch, "SHAPE_MISMATCH: empty batch");
    const int d_in = net.d_in, d_out = net.d_out;
    for (const Transition& t : batch) {
        if (int(t.s.size()) != d_in || int(t.s_next.size()) != d_in)
            throw DqnError(DqnError::Code::ShapeMismatch, "SHAPE_MISMATCH: observation width");
        if (t.a < 0 || t.a >= d_out)
            throw DqnError(DqnError::Code::ShapeMismatch, "SHAPE_MISMATCH: action index");
    }

    std::vector<double> X(std::size_t(B) * d_in), Xn(std::size_t(B) * d_in);
    for (int i = 0; i < B; ++i) {
        std::copy(batch[i].s.begin(), batch[i].s.end(), X.begin() + std::size_t(i) * d_in);
        std::copy(batch[i].s_next.begin(), batch[i].s_next.end(), Xn.begin() + std::size_t(i) * d_in);
    }

    nn::ForwardCache cache;
    std::vector<double> Q(std::size_t(B) * d_out), Qn(std::size_t(B) * d_out);
    nn::forward_batch(net, X.data(), B, Q.data(), &cache);
    nn::forward_batch(target ? *target : net, Xn.data(), B, Qn.data());

    std::vector<double> dLdq(std::size_t(B) * d_out, 0.0);
    double loss = 0.0;
    for (int i = 0; i < B; ++i) {
        double max_next = Qn[std::size_t(i) * d_out];
        for (int a = 1; a < d_out; ++a) max_next = std::max(max_next, Qn[std::size_t(i) * d_out + a]);
        const double y = batch[i].r + (batch[i].done ? 0.0 : cfg.gamma * max_next);
        const double err = Q[std::size_t(i) * d_out + batch[i].a] - y;
        loss += err * err;
        dLdq[std::size_t(i) * d_out + batch[i].a] = 2.0 * err / B;
    }
    loss /= B;

    nn::Gradients grads = nn::backward(net, cache, dLdq);
    if (hook && *hook) loss += (*hook)(net, grads);
    nn::adam_step(net, grads, opt);
    if (target && cfg.use_target) soft_update(net, *target, cfg.target_tau);
    return loss;
}

void soft_update(const nn::QNetwork& src, nn::QNetwork& dst, double tau) {
    if (!src.congruent_with(dst))
        throw DqnError(DqnError::Code::ShapeMismatch, "SHAPE_MISMATCH: target architecture");
    for (std::size_t i = 0; i < dst.params.size(); ++i)
        dst.params[i] = (1.0 - tau) * dst.params[i] + tau * src.params[i];
    ++dst.revision;
}

}  // namespace rail::dqn
