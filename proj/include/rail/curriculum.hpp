#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rail/continual.hpp"
#include "rail/dqn.hpp"
#include "rail/observation.hpp"
#include "rail/stage.hpp"

namespace rail::curriculum {

class CurriculumError : public std::runtime_error {
public:
    enum class Code { ParseError, ValidationError, BadOrder };
    CurriculumError(Code code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

struct Curriculum {
    std::string name;
    std::vector<sim::StageSpec> stages;

    // Stage indices where the environment family changes; these are the
    // continual-learning task boundaries (size growth within a family is not).
    std::vector<int> task_boundaries() const;
};

enum class BuiltinKind { None, Naive, Custom, CustomRehearsal };

// The four canonical stage tables, with per-stage step budgets multiplied by
// `scale` (the desk-scale knob); scale must be in (0, 1].
Curriculum builtin_curriculum(BuiltinKind kind, double scale);

// Line format: family width height agents s1/s2/s3/s4 malf_num/malf_den steps
// [switches], '#' starts a comment. Parse errors report the line number;
// validation errors name the violated invariant.
Curriculum load_curriculum(const std::string& path);
Curriculum parse_curriculum(const std::string& text, const std::string& name);
std::string serialize_curriculum(const Curriculum& c);

// Reorders the three family blocks of a custom-style curriculum per a
// three-letter code over P(athfinding), M(alfunction), D(eadlock).
Curriculum permute(const Curriculum& c, const std::string& order);

enum class Algo { Dqn, DqnEwc, DqnPau, DqnPauEwc, Cde };
std::string algo_name(Algo a);
std::optional<Algo> algo_from_name(const std::string& s);

struct EpisodeRecord {
    int stage = 0;
    int episode_in_stage = 0;
    std::string family;
    int steps = 0;
    double score = 0.0;
    double completion = 0.0;
    double epsilon = 0.0;
    int anchors = 1;
    std::int64_t global_step = 0;
};

struct ProbeRecord {
    int stage = 0;
    std::int64_t at_step = 0;
    std::string env;
    double score = 0.0;
    double completion = 0.0;
};

struct EvalSummary {
    int episodes = 0;
    double score_mean = 0.0, score_sd = 0.0;
    double completion_mean = 0.0, completion_sd = 0.0;
};

struct BoundaryEvent {
    int stage = 0;
    std::size_t buffer_before = 0;
    std::size_t buffer_after = 0;
    int anchors_after = 0;
};

struct RunResult {
    std::string algo;
    std::string curriculum_name;
    std::uint64_t seed = 0;
    std::string config_fingerprint;
    std::vector<EpisodeRecord> episodes;
    std::vector<ProbeRecord> probes;
    std::vector<BoundaryEvent> boundaries;
    EvalSummary final_eval;
    std::int64_t total_env_steps = 0;
    std::int64_t total_updates = 0;
    int final_consolidations = 0;
    int final_anchors = 1;
    double wall_seconds = 0.0;
};

// Streaming callbacks; any of them may be left empty.
struct MetricsSink {
    std::function<void(const EpisodeRecord&)> on_episode;
    std::function<void(const ProbeRecord&)> on_probe;
    std::function<void(const EvalSummary&)> on_eval;
};

struct RunOptions {
    std::vector<int> hidden{1024, 1024};
    dqn::DqnConfig dqn;
    cl::CdeConfig cde;
    obs::ObsConfig obs;
    // Retention probes: every probe_fraction of a stage's budget, run
    // probe_episodes greedy episodes per probe environment; <= 0 disables.
    double probe_fraction = 0.1;
    int probe_episodes = 10;
    int eval_episodes = 50;
    bool boundary_on_row = false;  // treat every stage row as a task boundary
    sim::StageSpec eval_spec = default_eval_spec();
    std::string checkpoint_out;

    static sim::StageSpec default_eval_spec();
};

// The full training protocol: iterates stages, runs episodes until each
// stage's env-step budget is spent, resets the replay buffer at every task
// boundary (consolidating / expanding per algorithm), and finishes with a
// greedy evaluation on the eval environment.
RunResult run_curriculum(Algo algo, const Curriculum& curriculum, std::uint64_t seed,
                         const RunOptions& opts, const MetricsSink* sink = nullptr);

}  // namespace rail::curriculum
