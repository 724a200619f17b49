#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "rail/dqn.hpp"
#include "rail/neuralnet.hpp"
#include "rail/rng.hpp"

namespace rail::cl {

class ClError : public std::runtime_error {
public:
    enum class Code { EmptyBuffer, ShapeMismatch, BadConfig, NoData, BadCheckpoint };
    ClError(Code code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

// One finished task's quadratic penalty record: parameter snapshot plus the
// diagonal Fisher estimate taken on that task's replay data.
struct Consolidation {
    std::vector<double> theta_star;
    std::vector<double> fisher;
    int task_id = 0;
};

enum class AnchorMode : std::uint8_t { EwcStable, PauPlastic };

struct Anchor {
    nn::QNetwork net;
    std::optional<nn::QNetwork> target;
    nn::OptState opt;
    std::vector<Consolidation> consolidations;
    AnchorMode mode = AnchorMode::PauPlastic;
    std::vector<double> ep_scores;       // current task only
    std::vector<double> ep_completions;  // current task only
    int born_task = 0;
};

struct CdeConfig {
    int max_anchors = 2;            // N
    double accept_threshold = 1.0;  // trial must beat every incumbent by this factor
    double lambda = 0.5;
    int fisher_samples = 1000;  // M; the full buffer is used when smaller
    int perf_window = 10;       // K_w episodes for the performance statistic
    bool rotate_actions = true;  // false: pick a uniformly random anchor per action
    std::vector<int> hidden{1024, 1024};
    dqn::DqnConfig dqn;
};

// Ordered anchor set plus rotation bookkeeping. During a task the trial
// anchor (when present) is the last element, so the anchor count may reach
// max_anchors + 1 until expansion_and_pruning settles the task.
struct SubspaceSet {
    std::vector<Anchor> anchors;
    int act_rotation = 0;
    bool has_trial = false;
    int current_task = 0;
    CdeConfig cfg;

    Anchor& rotation_anchor() { return anchors[act_rotation % anchors.size()]; }
};

// Diagonal Fisher estimate: mean squared gradient of the single-transition
// TD loss over `samples` draws from the buffer (the whole buffer, in order,
// when it holds fewer). Throws EmptyBuffer on an empty buffer.
std::vector<double> estimate_fisher_diagonal(const nn::QNetwork& net, const dqn::ReplayBuffer& buffer,
                                             int samples, double gamma, Rng& rng);

// Penalty sum over consolidations of (lambda/2) * F_j * (theta_j - theta*_j)^2.
// When grad_out is given, adds lambda * F_j * (theta_j - theta*_j) to it.
double ewc_penalty(const nn::QNetwork& net, const std::vector<Consolidation>& consolidations,
                   double lambda, nn::Gradients* grad_out = nullptr);

SubspaceSet cde_init(int d_in, int d_out, const CdeConfig& cfg, std::uint64_t seed);

// Task-boundary bookkeeping: consolidate and freeze every existing anchor
// (Fisher on the outgoing buffer, PAU coefficients locked, mode EwcStable),
// then append a plastic trial anchor whose weights average the incumbents
// and whose activations restart from the ReLU fit. The caller resets the
// replay buffer afterwards.
void begin_task(SubspaceSet& set, const dqn::ReplayBuffer& outgoing_buffer, Rng& rng);

// Training mode: the rotation anchor acts epsilon-greedily (or a random
// anchor when rotation is disabled). Eval mode: the anchor with the best
// mean completion this task acts greedily; ties prefer the lower mean score.
int cde_act(const SubspaceSet& set, std::span<const double> obs, double eps, bool eval, Rng& rng);

// Appends the finished episode's stats to the rotation anchor and advances
// the rotation cyclically.
void record_episode(SubspaceSet& set, double score, double completion);

// Updates every anchor on the shared batch: the trial trains plainly with
// PAU gradients flowing; stable anchors add their EWC penalties and keep
// activations frozen. Returns per-anchor losses.
std::vector<double> cde_learn(SubspaceSet& set, const std::vector<dqn::Transition>& batch);

// Mean completion over the last `window` episodes of the current task.
// Throws NoData when the anchor has no recorded episodes.
double performance_W(const Anchor& anchor, int window);
// Tie-breaking statistic when completions carry no signal: 1 - mean score.
double performance_fallback(const Anchor& anchor, int window);

// End-of-task decision per the expansion rule: the trial stays only if its
// performance exceeds accept_threshold times every incumbent's; when the
// set then exceeds max_anchors the worst incumbent is removed (ties drop
// the oldest). Otherwise the trial is discarded.
void expansion_and_pruning(SubspaceSet& set);

void save_subspace(const SubspaceSet& set, const std::string& path);
SubspaceSet load_subspace(const std::string& path);

}  // namespace rail::cl
