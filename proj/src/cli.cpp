#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "rail/harness.hpp"

namespace rail::harness {

namespace {

curriculum::Curriculum resolve_curriculum(const std::string& name, double scale) {
    if (name == "none") return curriculum::builtin_curriculum(curriculum::BuiltinKind::None, scale);
    if (name == "naive") return curriculum::builtin_curriculum(curriculum::BuiltinKind::Naive, scale);
    if (name == "custom")
        return curriculum::builtin_curriculum(curriculum::BuiltinKind::Custom, scale);
    if (name == "custom-rehearsal")
        return curriculum::builtin_curriculum(curriculum::BuiltinKind::CustomRehearsal, scale);
    curriculum::Curriculum c = curriculum::load_curriculum(name);
    if (scale != 1.0)
        for (auto& s : c.stages)
            s.network_steps = std::max<std::int64_t>(1, std::llround(double(s.network_steps) * scale));
    return c;
}

sim::StageSpec parse_env_spec(const std::string& text) {
    // Same grammar as a curriculum line with the step budget defaulted.
    curriculum::Curriculum c = curriculum::parse_curriculum(text + " 1", "env-spec");
    return c.stages.at(0);
}

int cmd_train(const std::string& algo_name, const std::string& curriculum_name,
              const std::string& order, double scale, std::uint64_t seed, const std::string& out_path,
              const std::string& cde_act, double eps_threshold, int n_anchors, int hidden,
              double probe_frac, int probe_episodes, int eval_episodes, bool no_target,
              bool row_boundaries, const std::string& checkpoint_out, const std::string& env_spec) {
    auto algo = curriculum::algo_from_name(algo_name);
    if (!algo) throw CLI::ValidationError("--algo", "unknown algorithm '" + algo_name + "'");

    curriculum::Curriculum cur = resolve_curriculum(curriculum_name, scale);
    if (!order.empty()) cur = curriculum::permute(cur, order);

    curriculum::RunOptions opts;
    opts.hidden = {hidden, hidden};
    opts.cde.accept_threshold = eps_threshold;
    opts.cde.max_anchors = n_anchors;
    opts.cde.rotate_actions = cde_act != "random";
    opts.probe_fraction = probe_frac;
    opts.probe_episodes = probe_episodes;
    opts.eval_episodes = eval_episodes;
    opts.dqn.use_target = !no_target;
    opts.boundary_on_row = row_boundaries;
    opts.checkpoint_out = checkpoint_out;
    if (!env_spec.empty()) opts.eval_spec = parse_env_spec(env_spec);

    curriculum::RunResult result = curriculum::run_curriculum(*algo, cur, seed, opts);
    write_metrics(result, out_path);
    std::cout << "run complete: algo=" << result.algo << " curriculum=" << result.curriculum_name
              << " seed=" << result.seed << " episodes=" << result.episodes.size()
              << " env_steps=" << result.total_env_steps << "\n"
              << "final eval: score " << result.final_eval.score_mean << " +- "
              << result.final_eval.score_sd << ", completion " << result.final_eval.completion_mean
              << " +- " << result.final_eval.completion_sd << "\n"
              << "metrics written to " << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, int episodes, std::uint64_t seed,
             const std::string& env_spec) {
    sim::StageSpec spec =
        env_spec.empty() ? curriculum::RunOptions::default_eval_spec() : parse_env_spec(env_spec);
    obs::ObsConfig obs_cfg;

    std::ifstream probe(checkpoint);
    if (!probe) throw HarnessError(HarnessError::Code::IoError, "cannot open " + checkpoint);
    std::string magic;
    std::getline(probe, magic);
    probe.close();

    EvalStats stats;
    if (magic == "RAILCDE 1") {
        cl::SubspaceSet set = cl::load_subspace(checkpoint);
        PolicyFn policy = [&set](const sim::EnvState& state, const obs::Observer& observer, int id) {
            Rng unused(0);
            return sim::Action(cl::cde_act(set, observer.observe(state, id), 0.0, true, unused));
        };
        stats = evaluate(policy, spec, episodes, seed, obs_cfg);
    } else {
        nn::QNetwork net = nn::load_network(checkpoint);
        stats = evaluate(network_policy(net, obs_cfg), spec, episodes, seed, obs_cfg);
    }
    std::cout << "eval over " << episodes << " episodes on " << sim::family_name(spec.family) << " "
              << spec.width << "x" << spec.height << "/" << spec.agents << " agents\n"
              << "score " << stats.score_mean << " +- " << stats.score_sd << "\n"
              << "completion " << stats.completion_mean << " +- " << stats.completion_sd << "\n";
    return 0;
}

int cmd_oracle(const std::string& instance_path) {
    TinyInstance inst = load_instance(instance_path);
    ScheduleResult res = tiny_exact_scheduler(inst);
    std::cout << "objective " << res.objective << "\n";
    for (std::size_t k = 0; k < res.routes.size(); ++k) {
        std::cout << "train " << k << ":";
        for (int yard : res.routes[k]) std::cout << " " << yard;
        std::cout << "\n";
    }
    return 0;
}

}  // namespace

int cli(const std::vector<std::string>& args) {
    CLI::App app{"railcde: continual-RL workbench for grid train scheduling"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "train an agent over a curriculum");
    std::string algo = "dqn", curriculum_name = "custom", order, out_path = "metrics.jsonl";
    std::string cde_act = "rotation", checkpoint_out, env_spec;
    double scale = 1.0, eps_threshold = 1.0, probe_frac = 0.1;
    std::uint64_t seed = 1;
    int n_anchors = 2, hidden = 1024, probe_episodes = 10, eval_episodes = 50;
    bool no_target = false, row_boundaries = false;
    train->add_option("--algo", algo, "dqn|dqn-ewc|dqn-pau|dqn-pau-ewc|cde")->capture_default_str();
    train->add_option("--curriculum", curriculum_name,
                      "none|naive|custom|custom-rehearsal or a curriculum file")
        ->capture_default_str();
    train->add_option("--order", order, "family permutation for the custom curriculum (PMD|MPD|MDP)");
    train->add_option("--scale", scale, "step-budget scale in (0,1]")->capture_default_str();
    train->add_option("--seed", seed, "run seed")->capture_default_str();
    train->add_option("--out", out_path, "metrics output path (jsonl)")->capture_default_str();
    train->add_option("--cde-act", cde_act, "rotation|random anchor selection during training")
        ->check(CLI::IsMember({"rotation", "random"}))
        ->capture_default_str();
    train->add_option("--eps-threshold", eps_threshold, "CDE expansion acceptance threshold")
        ->capture_default_str();
    train->add_option("--n-anchors", n_anchors, "CDE max anchors N")->capture_default_str();
    train->add_option("--hidden", hidden, "hidden layer width")->capture_default_str();
    train->add_option("--probe-frac", probe_frac,
                      "retention probes every this fraction of a stage budget (<=0 disables)")
        ->capture_default_str();
    train->add_option("--probe-episodes", probe_episodes, "episodes per retention probe")
        ->capture_default_str();
    train->add_option("--eval-episodes", eval_episodes, "episodes in the final evaluation")
        ->capture_default_str();
    train->add_flag("--no-target", no_target, "disable the soft-updated target network");
    train->add_flag("--boundary-on-row", row_boundaries,
                    "treat every curriculum row as a task boundary (default: family changes)");
    train->add_option("--checkpoint-out", checkpoint_out, "write the final policy checkpoint here");
    train->add_option("--eval-env", env_spec,
                      "eval env spec: 'family width height agents s1/s2/s3/s4 malf'");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint greedily");
    std::string checkpoint;
    int episodes = 50;
    std::uint64_t eval_seed = 1;
    std::string eval_env;
    eval_cmd->add_option("--checkpoint", checkpoint, "network or subspace checkpoint")->required();
    eval_cmd->add_option("--episodes", episodes, "episode count")->capture_default_str();
    eval_cmd->add_option("--seed", eval_seed, "base seed")->capture_default_str();
    eval_cmd->add_option("--env", eval_env, "env spec: 'family width height agents s1/s2/s3/s4 malf'");

    // oracle
    auto* oracle = app.add_subcommand("oracle", "exact tiny-instance scheduling oracle");
    std::string instance_path;
    oracle->add_option("--instance", instance_path, "instance file")->required();

    // selftest
    auto* st = app.add_subcommand("selftest", "run the fast property suites");

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help() << "\n";
        return 2;
    }

    try {
        if (train->parsed()) {
            if (!order.empty() && curriculum_name == "none")
                throw CLI::ValidationError("--order", "needs a multi-family curriculum, not 'none'");
            return cmd_train(algo, curriculum_name, order, scale, seed, out_path, cde_act,
                             eps_threshold, n_anchors, hidden, probe_frac, probe_episodes,
                             eval_episodes, no_target, row_boundaries, checkpoint_out, env_spec);
        }
        if (eval_cmd->parsed()) return cmd_eval(checkpoint, episodes, eval_seed, eval_env);
        if (oracle->parsed()) return cmd_oracle(instance_path);
        if (st->parsed()) return selftest(std::cout) ? 0 : 1;
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace rail::harness
