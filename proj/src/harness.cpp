#include "rail/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace rail::harness {

using sim::Action;
using sim::Cell;
using sim::Heading;

PolicyFn always_stop_policy() {
    return [](const sim::EnvState&, const obs::Observer&, int) { return Action::Stop; };
}

PolicyFn bfs_oracle_policy() {
    return [](const sim::EnvState& state, const obs::Observer& observer, int id) {
        const sim::Train& t = state.trains[id];
        if (t.status == sim::TrainStatus::Done) return Action::DoNothing;
        if (t.status == sim::TrainStatus::Ready) return Action::Forward;

        const sim::DistanceField& field = observer.field_for(t.target);
        unsigned exits = state.grid.at(t.position).exits_for(t.heading);
        int best = sim::kInfiniteDistance;
        std::optional<Heading> dir;
        for (int d = 0; d < 4; ++d) {
            if (!(exits & (1u << d))) continue;
            Cell nbr = neighbor(t.position, Heading(d));
            if (!state.grid.in_bounds(nbr)) continue;
            int dist = field.at(nbr, Heading(d));
            if (dist < best) {
                best = dist;
                dir = Heading(d);
            }
        }
        if (!dir || best == sim::kInfiniteDistance) return Action::Stop;
        if (*dir == t.heading) return Action::Forward;
        if (*dir == sim::left_of(t.heading)) return Action::TurnLeft;
        if (*dir == sim::right_of(t.heading)) return Action::TurnRight;
        return Action::DoNothing;  // dead-end turnaround is the track's only option
    };
}

PolicyFn network_policy(const nn::QNetwork& net, const obs::ObsConfig& cfg) {
    return [&net](const sim::EnvState& state, const obs::Observer& observer, int id) {
        return Action(dqn::greedy_action(net, observer.observe(state, id)));
    };
}

std::pair<double, double> run_policy_episode(const PolicyFn& policy, const sim::StageSpec& spec,
                                             std::uint64_t seed, const obs::ObsConfig& obs_cfg) {
    sim::EnvState env = sim::reset(spec, seed);
    obs::Observer observer(obs_cfg, env);
    const int n = int(env.trains.size());
    sim::EpisodeLog log;
    log.num_agents = n;
    log.max_ticks = env.max_ticks;
    for (;;) {
        std::vector<Action> actions(n, Action::DoNothing);
        for (int i = 0; i < n; ++i) {
            if (env.trains[i].status == sim::TrainStatus::Done) continue;
            actions[i] = policy(env, observer, i);
        }
        sim::StepResult res = sim::step(env, actions);
        observer.begin_tick(env);
        double sum = 0.0;
        for (double r : res.rewards) sum += r;
        log.tick_reward_sums.push_back(sum);
        if (res.done) break;
    }
    log.arrival_ticks.resize(n);
    for (int i = 0; i < n; ++i) log.arrival_ticks[i] = env.trains[i].arrival_tick;
    return sim::episode_score(log);
}

EvalStats evaluate(const PolicyFn& policy, const sim::StageSpec& eval_spec, int episodes,
                   std::uint64_t seed, const obs::ObsConfig& obs_cfg) {
    if (episodes < 1) throw std::invalid_argument("episodes must be >= 1");
    std::vector<double> scores, completions;
    for (int e = 0; e < episodes; ++e) {
        auto [s, c] = run_policy_episode(policy, eval_spec, seed + std::uint64_t(e), obs_cfg);
        scores.push_back(s);
        completions.push_back(c);
    }
    auto mean_sd = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= double(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        return std::make_pair(mean, v.size() > 1 ? std::sqrt(var / double(v.size() - 1)) : 0.0);
    };
    EvalStats st;
    std::tie(st.score_mean, st.score_sd) = mean_sd(scores);
    std::tie(st.completion_mean, st.completion_sd) = mean_sd(completions);
    return st;
}

// --- exact scheduling oracle ----------------------------------------------------

namespace {

void enumerate_paths(const TinyInstance& inst, int at, int dest, double leg_cost,
                     std::vector<int>& path, std::vector<bool>& seen, double cost, double& best,
                     std::vector<int>& best_path) {
    if (at == dest) {
        if (cost < best) {
            best = cost;
            best_path = path;
        }
        return;
    }
    for (int j = 0; j < inst.yards; ++j) {
        if (seen[j] || inst.d(at, j) <= 0.0) continue;
        seen[j] = true;
        path.push_back(j);
        enumerate_paths(inst, j, dest, leg_cost, path, seen, cost + inst.d(at, j) + leg_cost, best,
                        best_path);
        path.pop_back();
        seen[j] = false;
    }
}

}  // namespace

ScheduleResult tiny_exact_scheduler(const TinyInstance& inst) {
    if (inst.yards < 1 || inst.yards > 6)
        throw HarnessError(HarnessError::Code::BadInstance, "instance must have 1..6 yards");
    if (inst.trains.empty() || inst.trains.size() > 3)
        throw HarnessError(HarnessError::Code::BadInstance, "instance must have 1..3 trains");
    for (int i = 0; i < inst.yards; ++i)
        for (int j = 0; j < i; ++j)
            if (std::abs(inst.d(i, j) - inst.d(j, i)) > 1e-9)
                throw HarnessError(HarnessError::Code::BadInstance, "distance matrix not symmetric");

    ScheduleResult out;
    for (std::size_t k = 0; k < inst.trains.size(); ++k) {
        const auto& t = inst.trains[k];
        if (t.speed <= 0.0)
            throw HarnessError(HarnessError::Code::BadInstance, "train speed must be positive");
        if (t.origin < 0 || t.origin >= inst.yards || t.dest < 0 || t.dest >= inst.yards)
            throw HarnessError(HarnessError::Code::BadInstance, "train endpoints out of range");

        // Each traversed leg costs d/v plus the expected malfunction delay m*h.
        // Route choice is independent across trains, so the optimum is the
        // per-train minimum over simple paths, scaled by 1/v after summing d.
        double best = std::numeric_limits<double>::infinity();
        std::vector<int> path{t.origin}, best_path;
        std::vector<bool> seen(inst.yards, false);
        seen[t.origin] = true;
        TinyInstance scaled = inst;  // scale distances so the DFS accumulates the true cost
        for (double& d : scaled.dist) d = d > 0.0 ? d / t.speed : d;
        enumerate_paths(scaled, t.origin, t.dest, t.malf_rate * t.halt, path, seen, 0.0, best,
                        best_path);
        if (!std::isfinite(best))
            throw HarnessError(HarnessError::Code::Infeasible,
                               "INFEASIBLE: train " + std::to_string(k) + " has no route");
        out.objective += best;
        out.routes.push_back(std::move(best_path));
    }
    return out;
}

TinyInstance parse_instance(const std::string& text) {
    std::istringstream in(text);
    TinyInstance inst;
    if (!(in >> inst.yards) || inst.yards < 1)
        throw HarnessError(HarnessError::Code::BadInstance, "bad yard count");
    inst.dist.resize(std::size_t(inst.yards) * inst.yards);
    for (double& d : inst.dist)
        if (!(in >> d)) throw HarnessError(HarnessError::Code::BadInstance, "bad distance matrix");
    TinyInstance::TrainSpec t;
    while (in >> t.speed >> t.malf_rate >> t.halt >> t.origin >> t.dest) inst.trains.push_back(t);
    if (inst.trains.empty())
        throw HarnessError(HarnessError::Code::BadInstance, "instance has no trains");
    return inst;
}

TinyInstance load_instance(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw HarnessError(HarnessError::Code::IoError, "cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_instance(buf.str());
}

// --- fixtures ----------------------------------------------------------------

sim::EnvState make_head_on_scenario() {
    sim::GridBuilder gb(4, 1);
    gb.link_run({0, 0}, {0, 3});
    sim::RailGrid grid = gb.finish({{{0, 0}, Heading::E}, {{0, 3}, Heading::W}}, {{0, 3}, {0, 0}});

    sim::EnvState s;
    s.grid = std::move(grid);
    s.trains.resize(2);
    s.trains[0].id = 0;
    s.trains[0].position = {0, 1};
    s.trains[0].heading = Heading::E;
    s.trains[0].target = {0, 3};
    s.trains[0].status = sim::TrainStatus::Active;
    s.trains[1].id = 1;
    s.trains[1].position = {0, 2};
    s.trains[1].heading = Heading::W;
    s.trains[1].target = {0, 0};
    s.trains[1].status = sim::TrainStatus::Active;
    for (auto& t : s.trains) {
        t.spawn = t.position;
        t.spawn_heading = t.heading;
    }
    s.max_ticks = 40;
    return s;
}

sim::EnvState make_cycle_scenario() {
    sim::GridBuilder gb(2, 2);
    gb.link({0, 0}, Heading::E);
    gb.link({0, 1}, Heading::S);
    gb.link({1, 0}, Heading::E);
    gb.link({0, 0}, Heading::S);
    sim::RailGrid grid = gb.finish({{{0, 0}, Heading::N}}, {{0, 0}});

    // Four trains chasing clockwise; each one's only exit is its neighbor.
    sim::EnvState s;
    s.grid = std::move(grid);
    s.trains.resize(4);
    const Cell cells[4] = {{0, 1}, {1, 1}, {1, 0}, {0, 0}};
    const Heading headings[4] = {Heading::E, Heading::S, Heading::W, Heading::N};
    const Cell targets[4] = {{1, 0}, {0, 0}, {0, 1}, {1, 1}};
    for (int i = 0; i < 4; ++i) {
        s.trains[i].id = i;
        s.trains[i].position = cells[i];
        s.trains[i].heading = headings[i];
        s.trains[i].target = targets[i];
        s.trains[i].status = sim::TrainStatus::Active;
        s.trains[i].spawn = cells[i];
        s.trains[i].spawn_heading = headings[i];
    }
    s.max_ticks = 32;
    return s;
}

}  // namespace rail::harness
