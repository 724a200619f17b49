#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "rail/curriculum.hpp"
#include "rail/observation.hpp"
#include "rail/railsim.hpp"

namespace rail::harness {

class HarnessError : public std::runtime_error {
public:
    enum class Code { Infeasible, IoError, BadInstance };
    HarnessError(Code code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

// --- policy evaluation -------------------------------------------------------

// A policy picks an action for one train given the full state and the
// per-tick observer (which carries distance fields and deadlock caches).
using PolicyFn =
    std::function<sim::Action(const sim::EnvState&, const obs::Observer&, int train_id)>;

PolicyFn always_stop_policy();
// Follows shortest-path distances to the train's target; enters immediately.
PolicyFn bfs_oracle_policy();
PolicyFn network_policy(const nn::QNetwork& net, const obs::ObsConfig& cfg);

struct EvalStats {
    double score_mean = 0.0, score_sd = 0.0;
    double completion_mean = 0.0, completion_sd = 0.0;
};

// Runs `episodes` greedy episodes on freshly seeded environments
// (seed .. seed+episodes-1); sample standard deviations, 0 when episodes == 1.
EvalStats evaluate(const PolicyFn& policy, const sim::StageSpec& eval_spec, int episodes,
                   std::uint64_t seed, const obs::ObsConfig& obs_cfg);

// Single scored episode under a policy; exposed for tests and oracles.
std::pair<double, double> run_policy_episode(const PolicyFn& policy, const sim::StageSpec& spec,
                                             std::uint64_t seed, const obs::ObsConfig& obs_cfg);

// --- exact scheduling oracle --------------------------------------------------

// Tiny yard-network instance: symmetric distance matrix (entries <= 0 mean no
// direct connection) and up to a handful of trains.
struct TinyInstance {
    struct TrainSpec {
        double speed = 1.0;
        double malf_rate = 0.0;
        double halt = 0.0;
        int origin = 0;
        int dest = 0;
    };
    int yards = 0;
    std::vector<double> dist;  // yards x yards, row-major
    std::vector<TrainSpec> trains;

    double d(int i, int j) const { return dist[std::size_t(i) * yards + j]; }
};

struct ScheduleResult {
    double objective = 0.0;
    std::vector<std::vector<int>> routes;  // yard sequence per train
};

// Exhaustive search over simple origin->dest paths per train, minimizing
// sum over traversed legs of (d_ij / v_k + m_k * h_k). Throws Infeasible
// when some train has no route.
ScheduleResult tiny_exact_scheduler(const TinyInstance& inst);

// File format: first line yard count, then the distance matrix rows, then one
// line per train: v m h origin dest.
TinyInstance load_instance(const std::string& path);
TinyInstance parse_instance(const std::string& text);

// --- metrics persistence -------------------------------------------------------

// Newline-delimited JSON records: a versioned header, one record per episode
// probe and boundary, a final eval record, and a footer. read_metrics inverts
// write_metrics losslessly (the wall-clock field is carried verbatim).
void write_metrics(const curriculum::RunResult& result, const std::string& path);
curriculum::RunResult read_metrics(const std::string& path);

// --- fixtures -----------------------------------------------------------------

// Two opposing full-speed trains face to face on a plain bidirectional track;
// both are permanently stuck.
sim::EnvState make_head_on_scenario();
// Four trains chasing each other around a 2x2 ring; a cyclic block.
sim::EnvState make_cycle_scenario();

// --- CLI ------------------------------------------------------------------------

// Subcommands: train, eval, oracle, selftest. Returns the process exit code;
// usage errors print the contract and return 2.
int cli(const std::vector<std::string>& args);

// Fast property suites (gradient checks, EWC quadratic law, epsilon schedule,
// deadlock scenarios, buffer semantics). Prints one line per suite; returns
// true when everything passed.
bool selftest(std::ostream& out);

}  // namespace rail::harness
