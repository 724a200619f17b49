#include "rail/curriculum.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include "rail/railsim.hpp"

namespace rail::curriculum {

using sim::Family;
using sim::StageSpec;

std::vector<int> Curriculum::task_boundaries() const {
    std::vector<int> out;
    for (int i = 1; i < int(stages.size()); ++i)
        if (stages[i].family != stages[i - 1].family) out.push_back(i);
    return out;
}

namespace {

StageSpec row(Family f, int w, int h, int agents, std::array<int, 4> mix, int mn, int md,
              std::int64_t steps, std::optional<int> switches = std::nullopt) {
    StageSpec s;
    s.family = f;
    s.width = w;
    s.height = h;
    s.agents = agents;
    s.speed_mix = mix;
    s.malf_num = mn;
    s.malf_den = md;
    s.network_steps = steps;
    s.switches = switches;
    return s;
}

}  // namespace

Curriculum builtin_curriculum(BuiltinKind kind, double scale) {
    if (!(scale > 0.0 && scale <= 1.0)) throw std::invalid_argument("scale must be in (0,1]");
    auto scaled = [scale](std::int64_t steps) {
        return std::max<std::int64_t>(1, std::llround(double(steps) * scale));
    };

    Curriculum c;
    switch (kind) {
        case BuiltinKind::None:
            c.name = "none";
            c.stages = {row(Family::Sparse, 64, 64, 14, {25, 25, 25, 25}, 1, 1000, scaled(960000))};
            break;
        case BuiltinKind::Naive:
            c.name = "naive";
            c.stages = {
                row(Family::Sparse, 16, 18, 1, {0, 0, 0, 100}, 0, 1, scaled(192000)),
                row(Family::Sparse, 28, 28, 3, {50, 0, 0, 50}, 1, 1000, scaled(192000)),
                row(Family::Sparse, 40, 40, 6, {50, 0, 25, 25}, 1, 1000, scaled(192000)),
                row(Family::Sparse, 52, 52, 10, {25, 25, 25, 25}, 1, 1000, scaled(192000)),
                row(Family::Sparse, 64, 64, 14, {25, 25, 25, 25}, 1, 1000, scaled(192000)),
            };
            break;
        case BuiltinKind::Custom:
        case BuiltinKind::CustomRehearsal: {
            const bool rehearsal = kind == BuiltinKind::CustomRehearsal;
            const std::int64_t steps = scaled(rehearsal ? 64000 : 80000);
            c.name = rehearsal ? "custom-rehearsal" : "custom";
            c.stages = {
                row(Family::Pathfinding, 4, 4, 1, {0, 0, 0, 100}, 0, 1, steps),
                row(Family::Pathfinding, 8, 8, 1, {0, 0, 0, 100}, 0, 1, steps),
                row(Family::Pathfinding, 16, 16, 1, {0, 0, 0, 100}, 0, 1, steps),
                row(Family::Pathfinding, 32, 32, 1, {0, 0, 0, 100}, 0, 1, steps),
                row(Family::Malfunction, 12, 5, 5, {0, 0, 0, 100}, 1, 100, steps),
                row(Family::Malfunction, 12, 5, 6, {50, 0, 0, 50}, 1, 100, steps),
                row(Family::Malfunction, 12, 5, 7, {50, 0, 25, 25}, 1, 100, steps),
                row(Family::Malfunction, 12, 5, 8, {25, 25, 25, 25}, 1, 100, steps),
            };
            if (rehearsal)
                c.stages.push_back(row(Family::Pathfinding, 32, 32, 1, {0, 0, 0, 100}, 0, 1, steps));
            // Crossover switches thin out as the deadlock stages harden.
            c.stages.push_back(row(Family::Deadlock, 32, 2, 2, {0, 0, 0, 100}, 1, 64, steps, 4));
            c.stages.push_back(row(Family::Deadlock, 32, 2, 4, {50, 0, 0, 50}, 1, 64, steps, 3));
            c.stages.push_back(row(Family::Deadlock, 32, 4, 8, {50, 0, 25, 25}, 1, 64, steps, 2));
            c.stages.push_back(row(Family::Deadlock, 32, 4, 16, {25, 25, 25, 25}, 1, 64, steps, 1));
            if (rehearsal) {
                c.stages.push_back(row(Family::Pathfinding, 32, 32, 1, {0, 0, 0, 100}, 0, 1, steps));
                c.stages.push_back(row(Family::Malfunction, 12, 5, 8, {25, 25, 25, 25}, 1, 100, steps));
            }
            break;
        }
    }
    return c;
}

std::string serialize_curriculum(const Curriculum& c) {
    std::ostringstream out;
    out << "# curriculum " << c.name << "\n";
    out << "# family width height agents s1/s2/s3/s4 malf steps [switches]\n";
    for (const StageSpec& s : c.stages) {
        out << sim::family_name(s.family) << " " << s.width << " " << s.height << " " << s.agents
            << " " << s.speed_mix[0] << "/" << s.speed_mix[1] << "/" << s.speed_mix[2] << "/"
            << s.speed_mix[3] << " " << s.malf_num << "/" << s.malf_den << " " << s.network_steps;
        if (s.switches) out << " " << *s.switches;
        out << "\n";
    }
    return out.str();
}

Curriculum parse_curriculum(const std::string& text, const std::string& name) {
    Curriculum c;
    c.name = name;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    auto parse_fail = [&line_no](const std::string& why) -> void {
        throw CurriculumError(CurriculumError::Code::ParseError,
                              "PARSE_ERROR line " + std::to_string(line_no) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string family_tok;
        if (!(ls >> family_tok)) continue;  // blank line

        StageSpec s;
        auto fam = sim::family_from_name(family_tok);
        if (!fam) parse_fail("unknown family '" + family_tok + "'");
        s.family = *fam;
        std::string mix_tok, malf_tok;
        if (!(ls >> s.width >> s.height >> s.agents >> mix_tok >> malf_tok >> s.network_steps))
            parse_fail("expected: family width height agents s1/s2/s3/s4 malf steps");
        int sw;
        if (ls >> sw) s.switches = sw;

        {
            std::istringstream ms(mix_tok);
            char sep;
            if (!(ms >> s.speed_mix[0] >> sep >> s.speed_mix[1] >> sep >> s.speed_mix[2] >> sep >>
                  s.speed_mix[3]))
                parse_fail("bad speed mix '" + mix_tok + "'");
        }
        {
            std::istringstream ms(malf_tok);
            if (malf_tok.find('/') == std::string::npos) {
                if (!(ms >> s.malf_num)) parse_fail("bad malfunction rate '" + malf_tok + "'");
                s.malf_den = 1;
            } else {
                char sep;
                if (!(ms >> s.malf_num >> sep >> s.malf_den))
                    parse_fail("bad malfunction rate '" + malf_tok + "'");
            }
        }
        try {
            sim::validate_stage(s);
        } catch (const std::invalid_argument& e) {
            throw CurriculumError(CurriculumError::Code::ValidationError,
                                  "VALIDATION_ERROR line " + std::to_string(line_no) + ": " +
                                      e.what());
        }
        c.stages.push_back(s);
    }
    if (c.stages.empty())
        throw CurriculumError(CurriculumError::Code::ParseError, "PARSE_ERROR: no stages in file");
    return c;
}

Curriculum load_curriculum(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw CurriculumError(CurriculumError::Code::ParseError,
                              "PARSE_ERROR: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_curriculum(buf.str(), path);
}

Curriculum permute(const Curriculum& c, const std::string& order) {
    auto fail = [](const std::string& why) -> void {
        throw CurriculumError(CurriculumError::Code::BadOrder, "BAD_ORDER: " + why);
    };
    // Contiguous family blocks; the custom curriculum has exactly three.
    std::vector<std::pair<Family, std::vector<StageSpec>>> blocks;
    for (const StageSpec& s : c.stages) {
        if (blocks.empty() || blocks.back().first != s.family) blocks.push_back({s.family, {}});
        blocks.back().second.push_back(s);
    }
    if (blocks.size() != 3) fail("curriculum does not consist of three family blocks");

    auto family_of = [&fail](char ch) {
        switch (std::toupper(static_cast<unsigned char>(ch))) {
            case 'P': return Family::Pathfinding;
            case 'M': return Family::Malfunction;
            case 'D': return Family::Deadlock;
        }
        fail(std::string("unknown family code '") + ch + "'");
        return Family::Pathfinding;
    };
    if (order.size() != 3) fail("order must be three letters over {P,M,D}");
    Family want[3] = {family_of(order[0]), family_of(order[1]), family_of(order[2])};
    if (want[0] == want[1] || want[1] == want[2] || want[0] == want[2])
        fail("order must be a permutation of P, M, D");

    Curriculum out;
    out.name = c.name + "-" + order;
    for (Family f : want) {
        auto it = std::find_if(blocks.begin(), blocks.end(),
                               [f](const auto& b) { return b.first == f; });
        if (it == blocks.end()) fail("curriculum has no " + sim::family_name(f) + " block");
        out.stages.insert(out.stages.end(), it->second.begin(), it->second.end());
    }
    return out;
}

std::string algo_name(Algo a) {
    switch (a) {
        case Algo::Dqn: return "dqn";
        case Algo::DqnEwc: return "dqn-ewc";
        case Algo::DqnPau: return "dqn-pau";
        case Algo::DqnPauEwc: return "dqn-pau-ewc";
        case Algo::Cde: return "cde";
    }
    return "?";
}

std::optional<Algo> algo_from_name(const std::string& s) {
    std::string k;
    for (char c : s) k.push_back(c == '_' ? '-' : char(std::tolower(static_cast<unsigned char>(c))));
    if (k == "dqn") return Algo::Dqn;
    if (k == "dqn-ewc") return Algo::DqnEwc;
    if (k == "dqn-pau") return Algo::DqnPau;
    if (k == "dqn-pau-ewc") return Algo::DqnPauEwc;
    if (k == "cde") return Algo::Cde;
    return std::nullopt;
}

sim::StageSpec RunOptions::default_eval_spec() {
    return row(Family::Sparse, 16, 16, 3, {25, 25, 25, 25}, 1, 1000, 0);
}

// --- training driver --------------------------------------------------------

namespace {

constexpr std::uint64_t kAgentStream = 0x6167656e74;
constexpr std::uint64_t kNetStream = 0x6d6c70;
constexpr std::uint64_t kEvalStream = 0x6576616c;
constexpr std::uint64_t kProbeStream = 0x70726f6265;

// Single-agent interface the runner drives; implementations below cover the
// plain/EWC/PAU DQN variants and the CDE subspace set.
class Learner {
public:
    explicit Learner(std::size_t buffer_capacity) : buffer(buffer_capacity) {}
    virtual ~Learner() = default;

    virtual int act(std::span<const double> obs, double eps, Rng& rng) = 0;
    virtual int eval_act(std::span<const double> obs) = 0;
    virtual bool learn(Rng& rng) = 0;  // one update if the buffer is ready
    virtual void episode_end(double score, double completion) {}
    virtual void task_boundary(Rng& rng) = 0;
    virtual void finish() {}
    virtual int anchor_count() const { return 1; }
    virtual int consolidation_count() const { return 0; }
    virtual void save(const std::string& path) const = 0;

    dqn::ReplayBuffer buffer;
    std::int64_t update_count = 0;
};

class DqnLearner final : public Learner {
public:
    DqnLearner(Algo algo, int d_in, const RunOptions& opts, std::uint64_t seed)
        : Learner(opts.dqn.buffer_capacity), cfg_(opts.dqn), lambda_(opts.cde.lambda),
          fisher_samples_(opts.cde.fisher_samples) {
        use_ewc_ = algo == Algo::DqnEwc || algo == Algo::DqnPauEwc;
        const bool use_pau = algo == Algo::DqnPau || algo == Algo::DqnPauEwc;
        nn::ActivationSpec act =
            use_pau ? nn::ActivationSpec::pau_relu_init(true) : nn::ActivationSpec::rectifier();
        net_ = nn::mlp_init(d_in, opts.hidden, sim::kNumActions, act, seed);
        if (cfg_.use_target) target_ = net_;
        opt_.lr = cfg_.lr;
    }

    int act(std::span<const double> obs, double eps, Rng& rng) override {
        return dqn::select_action(net_, obs, eps, rng);
    }
    int eval_act(std::span<const double> obs) override { return dqn::greedy_action(net_, obs); }

    bool learn(Rng& rng) override {
        if (buffer.size() < std::size_t(cfg_.batch)) return false;
        auto batch = buffer.sample(std::size_t(cfg_.batch), rng);
        nn::QNetwork* target = target_ ? &*target_ : nullptr;
        if (use_ewc_ && !consolidations_.empty()) {
            const double lambda = lambda_;
            const auto& cons = consolidations_;
            dqn::EwcHook hook = [&cons, lambda](const nn::QNetwork& net, nn::Gradients& g) {
                return cl::ewc_penalty(net, cons, lambda, &g);
            };
            dqn::td_update(net_, target, batch, cfg_, opt_, &hook);
        } else {
            dqn::td_update(net_, target, batch, cfg_, opt_);
        }
        ++update_count;
        return true;
    }

    void task_boundary(Rng& rng) override {
        if (use_ewc_ && buffer.size() > 0) {
            std::vector<double> fisher =
                cl::estimate_fisher_diagonal(net_, buffer, fisher_samples_, cfg_.gamma, rng);
            consolidations_.push_back({net_.params, std::move(fisher), task_id_});
        }
        ++task_id_;
        buffer.reset();
    }

    void save(const std::string& path) const override { nn::save_network(net_, path); }

    int consolidation_count() const override { return int(consolidations_.size()); }

private:
    dqn::DqnConfig cfg_;
    nn::QNetwork net_;
    std::optional<nn::QNetwork> target_;
    nn::OptState opt_;
    std::vector<cl::Consolidation> consolidations_;
    bool use_ewc_ = false;
    double lambda_;
    int fisher_samples_;
    int task_id_ = 0;
};

class CdeLearner final : public Learner {
public:
    CdeLearner(int d_in, const RunOptions& opts, std::uint64_t seed)
        : Learner(opts.dqn.buffer_capacity) {
        cl::CdeConfig cfg = opts.cde;
        cfg.hidden = opts.hidden;
        cfg.dqn = opts.dqn;
        set_ = cl::cde_init(d_in, sim::kNumActions, cfg, seed);
    }

    int act(std::span<const double> obs, double eps, Rng& rng) override {
        return cl::cde_act(set_, obs, eps, false, rng);
    }
    int eval_act(std::span<const double> obs) override {
        Rng unused(0);
        return cl::cde_act(set_, obs, 0.0, true, unused);
    }

    bool learn(Rng& rng) override {
        if (buffer.size() < std::size_t(set_.cfg.dqn.batch)) return false;
        auto batch = buffer.sample(std::size_t(set_.cfg.dqn.batch), rng);
        cl::cde_learn(set_, batch);
        ++update_count;
        return true;
    }

    void episode_end(double score, double completion) override {
        cl::record_episode(set_, score, completion);
    }

    void task_boundary(Rng& rng) override {
        if (set_.has_trial) cl::expansion_and_pruning(set_);
        cl::begin_task(set_, buffer, rng);
        buffer.reset();
    }

    void finish() override {
        if (set_.has_trial) cl::expansion_and_pruning(set_);
    }

    int anchor_count() const override { return int(set_.anchors.size()); }
    void save(const std::string& path) const override { cl::save_subspace(set_, path); }

private:
    cl::SubspaceSet set_;
};

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string config_fingerprint(Algo algo, const Curriculum& c, const RunOptions& o) {
    std::ostringstream s;
    s << algo_name(algo) << "|" << serialize_curriculum(c) << "|hidden";
    for (int h : o.hidden) s << ":" << h;
    s << "|dqn " << o.dqn.gamma << " " << o.dqn.batch << " " << o.dqn.update_every << " " << o.dqn.lr
      << " " << o.dqn.use_target << " " << o.dqn.target_tau << "|cde " << o.cde.max_anchors << " "
      << o.cde.accept_threshold << " " << o.cde.lambda << " " << o.cde.rotate_actions << "|obs "
      << o.obs.branch_features << " " << o.obs.global_features << " " << o.obs.lookahead << "|probe "
      << o.probe_fraction << " " << o.probe_episodes << "|eval " << o.eval_episodes << "|row "
      << o.boundary_on_row;
    std::ostringstream hex;
    hex << std::hex << fnv1a(s.str());
    return hex.str();
}

// One greedy episode; returns (score, completion).
std::pair<double, double> greedy_episode(Learner& learner, const StageSpec& stage,
                                         std::uint64_t seed, const obs::ObsConfig& obs_cfg) {
    sim::EnvState env = sim::reset(stage, seed);
    obs::Observer observer(obs_cfg, env);
    const int n = int(env.trains.size());
    sim::EpisodeLog log;
    log.num_agents = n;
    log.max_ticks = env.max_ticks;
    for (;;) {
        std::vector<sim::Action> actions(n, sim::Action::DoNothing);
        for (int i = 0; i < n; ++i) {
            if (env.trains[i].status == sim::TrainStatus::Done) continue;
            actions[i] = sim::Action(learner.eval_act(observer.observe(env, i)));
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

std::vector<std::pair<std::string, StageSpec>> probe_specs(const RunOptions& opts) {
    return {
        {"pathfinding", row(Family::Pathfinding, 16, 16, 1, {0, 0, 0, 100}, 0, 1, 0)},
        {"malfunction", row(Family::Malfunction, 12, 5, 5, {0, 0, 0, 100}, 1, 100, 0)},
        {"deadlock", row(Family::Deadlock, 32, 2, 2, {0, 0, 0, 100}, 1, 64, 0, 4)},
        {"eval", opts.eval_spec},
    };
}

}  // namespace

RunResult run_curriculum(Algo algo, const Curriculum& curriculum, std::uint64_t seed,
                         const RunOptions& opts, const MetricsSink* sink) {
    if (curriculum.stages.empty()) throw std::invalid_argument("curriculum has no stages");
    for (const StageSpec& s : curriculum.stages) sim::validate_stage(s);

    const auto wall_start = std::chrono::steady_clock::now();
    const int d_in = obs::obs_dim(opts.obs);

    std::unique_ptr<Learner> learner;
    if (algo == Algo::Cde)
        learner = std::make_unique<CdeLearner>(d_in, opts, mix_seed(seed, kNetStream));
    else
        learner = std::make_unique<DqnLearner>(algo, d_in, opts, mix_seed(seed, kNetStream));

    Rng agent_rng(mix_seed(seed, kAgentStream));
    RunResult result;
    result.algo = algo_name(algo);
    result.curriculum_name = curriculum.name;
    result.seed = seed;
    result.config_fingerprint = config_fingerprint(algo, curriculum, opts);

    const std::vector<int> boundaries = curriculum.task_boundaries();
    std::int64_t global_step = 0;

    for (int stage_idx = 0; stage_idx < int(curriculum.stages.size()); ++stage_idx) {
        const StageSpec& stage = curriculum.stages[stage_idx];
        const bool is_boundary =
            stage_idx > 0 &&
            (opts.boundary_on_row ||
             std::find(boundaries.begin(), boundaries.end(), stage_idx) != boundaries.end());
        if (is_boundary) {
            const std::size_t before = learner->buffer.size();
            learner->task_boundary(agent_rng);
            result.boundaries.push_back(
                BoundaryEvent{stage_idx, before, learner->buffer.size(), learner->anchor_count()});
        }

        const std::int64_t budget = stage.network_steps;
        std::int64_t stage_steps = 0;
        std::int64_t probe_interval =
            opts.probe_fraction > 0 ? std::max<std::int64_t>(1, std::int64_t(budget * opts.probe_fraction))
                                    : 0;
        std::int64_t next_probe = probe_interval;
        int episode_idx = 0;

        while (stage_steps < budget) {
            const std::uint64_t ep_seed =
                mix_seed(seed, (std::uint64_t(stage_idx) << 32) | std::uint64_t(episode_idx));
            sim::EnvState env = sim::reset(stage, ep_seed);
            obs::Observer observer(opts.obs, env);
            const int n = int(env.trains.size());

            sim::EpisodeLog log;
            log.num_agents = n;
            log.max_ticks = env.max_ticks;
            std::vector<obs::FeatureVector> feats(n);
            for (int i = 0; i < n; ++i) feats[i] = observer.observe(env, i);
            int ep_steps = 0;

            for (;;) {
                const double eps = dqn::epsilon(global_step);
                std::vector<sim::Action> actions(n, sim::Action::DoNothing);
                std::vector<bool> acted(n, false);
                for (int i = 0; i < n; ++i) {
                    if (env.trains[i].status == sim::TrainStatus::Done) continue;
                    actions[i] = sim::Action(learner->act(feats[i], eps, agent_rng));
                    acted[i] = true;
                }
                sim::StepResult res = sim::step(env, actions);
                observer.begin_tick(env);
                double reward_sum = 0.0;
                for (int i = 0; i < n; ++i) {
                    if (!acted[i]) continue;
                    reward_sum += res.rewards[i];
                    obs::FeatureVector next = observer.observe(env, i);
                    const bool train_done = env.trains[i].status == sim::TrainStatus::Done;
                    learner->buffer.push({std::move(feats[i]), int(actions[i]), res.rewards[i],
                                          next, train_done || res.done});
                    feats[i] = std::move(next);
                }
                log.tick_reward_sums.push_back(reward_sum);
                ++global_step;
                ++stage_steps;
                ++ep_steps;
                if (global_step % opts.dqn.update_every == 0) learner->learn(agent_rng);
                if (res.done) break;
            }

            log.arrival_ticks.resize(n);
            for (int i = 0; i < n; ++i) log.arrival_ticks[i] = env.trains[i].arrival_tick;
            auto [score, completion] = sim::episode_score(log);
            learner->episode_end(score, completion);

            EpisodeRecord rec{stage_idx,  episode_idx,
                              sim::family_name(stage.family), ep_steps,
                              score,      completion,
                              dqn::epsilon(global_step), learner->anchor_count(),
                              global_step};
            result.episodes.push_back(rec);
            if (sink && sink->on_episode) sink->on_episode(rec);
            ++episode_idx;

            // Retention probes on the fixed environments, greedy policy.
            while (probe_interval > 0 && next_probe <= budget && stage_steps >= next_probe) {
                for (const auto& [env_name, spec] : probe_specs(opts)) {
                    double s_sum = 0.0, c_sum = 0.0;
                    for (int e = 0; e < opts.probe_episodes; ++e) {
                        auto [ps, pc] =
                            greedy_episode(*learner, spec, mix_seed(kProbeStream, e), opts.obs);
                        s_sum += ps;
                        c_sum += pc;
                    }
                    ProbeRecord pr{stage_idx, global_step, env_name,
                                   s_sum / opts.probe_episodes, c_sum / opts.probe_episodes};
                    result.probes.push_back(pr);
                    if (sink && sink->on_probe) sink->on_probe(pr);
                }
                next_probe += probe_interval;
            }
        }
    }

    learner->finish();

    // Final greedy evaluation on freshly seeded eval environments.
    {
        std::vector<double> scores, completions;
        for (int e = 0; e < opts.eval_episodes; ++e) {
            auto [s, c] =
                greedy_episode(*learner, opts.eval_spec, mix_seed(seed, kEvalStream) + e, opts.obs);
            scores.push_back(s);
            completions.push_back(c);
        }
        auto mean_sd = [](const std::vector<double>& v) {
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= double(v.size());
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            double sd = v.size() > 1 ? std::sqrt(var / double(v.size() - 1)) : 0.0;
            return std::make_pair(mean, sd);
        };
        auto [sm, ssd] = mean_sd(scores);
        auto [cm, csd] = mean_sd(completions);
        result.final_eval = {opts.eval_episodes, sm, ssd, cm, csd};
        if (sink && sink->on_eval) sink->on_eval(result.final_eval);
    }

    if (!opts.checkpoint_out.empty()) learner->save(opts.checkpoint_out);

    result.total_env_steps = global_step;
    result.total_updates = learner->update_count;
    result.final_consolidations = learner->consolidation_count();
    result.final_anchors = learner->anchor_count();
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    return result;
}

}  // namespace rail::curriculum
