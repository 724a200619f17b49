#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "rail/neuralnet.hpp"
#include "rail/rng.hpp"

namespace rail::dqn {

class DqnError : public std::runtime_error {
public:
    enum class Code { Underfull, ShapeMismatch };
    DqnError(Code code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

struct Transition {
    std::vector<double> s;
    int a = 0;
    double r = 0.0;
    std::vector<double> s_next;
    bool done = false;
};

// Ring buffer; at capacity new transitions overwrite the oldest.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = 1'000'000) : cap_(capacity) {}

    void push(Transition t);
    // Uniform with replacement. Throws Underfull when size < batch.
    std::vector<Transition> sample(std::size_t batch, Rng& rng) const;
    const Transition& at(std::size_t i) const { return data_[i]; }
    void reset() {
        data_.clear();
        cursor_ = 0;
    }
    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return cap_; }

private:
    std::vector<Transition> data_;
    std::size_t cap_;
    std::size_t cursor_ = 0;
};

struct DqnConfig {
    double gamma = 0.99;
    int batch = 128;
    int update_every = 8;  // env steps between gradient updates
    double lr = 5e-5;
    bool use_target = true;
    double target_tau = 1e-3;
    std::size_t buffer_capacity = 1'000'000;
};

// Exploration schedule: eps(x) = 1/1.000005^x over total env steps.
double epsilon(std::int64_t step);

// Epsilon-greedy; exploitation breaks ties toward the lowest action index.
int greedy_action(const nn::QNetwork& net, std::span<const double> obs);
int select_action(const nn::QNetwork& net, std::span<const double> obs, double eps, Rng& rng);

// Optional regularizer evaluated inside td_update: returns the penalty value
// and accumulates its gradient into the flat gradient vector.
using EwcHook = std::function<double(const nn::QNetwork&, nn::Gradients&)>;

// One DQN learning step on a batch: squared TD error vs the (target) network,
// optional penalty hook, one Adam step, then a soft target update. Returns
// the batch loss including the penalty.
double td_update(nn::QNetwork& net, nn::QNetwork* target, const std::vector<Transition>& batch,
                 const DqnConfig& cfg, nn::OptState& opt, const EwcHook* hook = nullptr);

// dst = (1-tau)*dst + tau*src over all parameters.
void soft_update(const nn::QNetwork& src, nn::QNetwork& dst, double tau);

}  // namespace rail::dqn
