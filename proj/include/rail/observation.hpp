#pragma once

#include <map>
#include <stdexcept>
#include <vector>

#include "rail/railsim.hpp"

namespace rail::obs {

using FeatureVector = std::vector<double>;

struct ObsConfig {
    int branch_features = 6;  // F: per-branch feature count
    int global_features = 6;  // G: agent-global feature count
    int lookahead = 0;        // L for agent-proximity scans; 0 means width+height
};

class ObsError : public std::runtime_error {
public:
    enum class Code { BadConfig, UnknownTrain };
    ObsError(Code code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

// D = 3*F + G. Throws BadConfig for non-positive F or negative G.
int obs_dim(const ObsConfig& cfg);

// Per-train fixed-width feature encoding. All features lie in [0,1] and are
// a deterministic function of the EnvState; features are relative (distances
// normalized by width+height), so the encoding is translation invariant.
//
// Branch block, for each of {left, forward, right} relative to the train's
// heading: normalized route distance to target via that branch (1 when
// illegal or unreachable), branch-legal flag, normalized distance to the
// nearest other agent along the branch, opposing-heading-agent flag,
// slower-same-heading-agent flag, branch-reaches-deadlocked-region flag.
//
// Global block: normalized own distance to target, speed, normalized
// remaining malfunction, fractional cell progress, episode fraction
// elapsed, active flag.
//
// The Observer caches per-episode distance fields and per-tick deadlock and
// occupancy state; call begin_tick() after every env step (and once before
// the first observe of an episode).
class Observer {
public:
    Observer(ObsConfig cfg, const sim::EnvState& state);

    void begin_tick(const sim::EnvState& state);
    FeatureVector observe(const sim::EnvState& state, int train_id) const;

    const sim::DistanceField& field_for(sim::Cell target) const;
    const std::vector<int>& deadlocked() const { return deadlocked_; }

private:
    ObsConfig cfg_;
    std::map<std::pair<int, int>, sim::DistanceField> fields_;  // target cell -> field
    std::vector<int> deadlocked_;
    std::vector<int> occ_;  // cell -> train id, Active trains only
    mutable std::vector<int> visit_mark_;
    mutable int visit_epoch_ = 0;
};

}  // namespace rail::obs
