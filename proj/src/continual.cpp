#include "rail/continual.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace rail::cl {

namespace {

// Squared-gradient accumulation for one transition's TD loss.
void accumulate_squared_td_gradient(const nn::QNetwork& net, const dqn::Transition& t, double gamma,
                                    std::vector<double>& acc) {
    nn::ForwardCache cache;
    std::vector<double> q = nn::forward(net, t.s, &cache);
    std::vector<double> qn = nn::forward(net, t.s_next);
    double max_next = qn[0];
    for (double v : qn) max_next = std::max(max_next, v);
    const double y = t.r + (t.done ? 0.0 : gamma * max_next);
    std::vector<double> dLdq(q.size(), 0.0);
    dLdq[t.a] = 2.0 * (q[t.a] - y);
    nn::Gradients g = nn::backward(net, cache, dLdq);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g.flat[i] * g.flat[i];
}

}  // namespace

std::vector<double> estimate_fisher_diagonal(const nn::QNetwork& net, const dqn::ReplayBuffer& buffer,
                                             int samples, double gamma, Rng& rng) {
    if (buffer.size() == 0)
        throw ClError(ClError::Code::EmptyBuffer, "EMPTY_BUFFER: cannot estimate Fisher");
    std::vector<double> fisher(net.params.size(), 0.0);
    std::size_t m = std::min<std::size_t>(std::size_t(std::max(1, samples)), buffer.size());
    if (buffer.size() <= std::size_t(samples)) {
        for (std::size_t i = 0; i < buffer.size(); ++i)
            accumulate_squared_td_gradient(net, buffer.at(i), gamma, fisher);
        m = buffer.size();
    } else {
        for (std::size_t i = 0; i < m; ++i)
            accumulate_squared_td_gradient(net, buffer.at(rng.bounded(buffer.size())), gamma, fisher);
    }
    for (double& f : fisher) f /= double(m);
    return fisher;
}

double ewc_penalty(const nn::QNetwork& net, const std::vector<Consolidation>& consolidations,
                   double lambda, nn::Gradients* grad_out) {
    double penalty = 0.0;
    for (const Consolidation& c : consolidations) {
        if (c.theta_star.size() != net.params.size() || c.fisher.size() != net.params.size())
            throw ClError(ClError::Code::ShapeMismatch, "SHAPE_MISMATCH: consolidation shape");
        for (std::size_t j = 0; j < net.params.size(); ++j) {
            const double diff = net.params[j] - c.theta_star[j];
            penalty += 0.5 * lambda * c.fisher[j] * diff * diff;
            if (grad_out) grad_out->flat[j] += lambda * c.fisher[j] * diff;
        }
    }
    return penalty;
}

namespace {

Anchor make_anchor(const CdeConfig& cfg, int d_in, int d_out, std::uint64_t seed, int born_task) {
    Anchor a;
    a.net = nn::mlp_init(d_in, cfg.hidden, d_out, nn::ActivationSpec::pau_relu_init(true), seed);
    if (cfg.dqn.use_target) a.target = a.net;
    a.opt.lr = cfg.dqn.lr;
    a.mode = AnchorMode::PauPlastic;
    a.born_task = born_task;
    return a;
}

}  // namespace

SubspaceSet cde_init(int d_in, int d_out, const CdeConfig& cfg, std::uint64_t seed) {
    if (cfg.max_anchors < 1)
        throw ClError(ClError::Code::BadConfig, "BAD_CONFIG: max_anchors must be >= 1");
    if (cfg.lambda < 0 || cfg.accept_threshold < 0)
        throw ClError(ClError::Code::BadConfig, "BAD_CONFIG: negative lambda or threshold");
    SubspaceSet set;
    set.cfg = cfg;
    set.anchors.push_back(make_anchor(cfg, d_in, d_out, seed, 0));
    return set;
}

void begin_task(SubspaceSet& set, const dqn::ReplayBuffer& outgoing_buffer, Rng& rng) {
    for (Anchor& a : set.anchors) {
        std::vector<double> fisher(a.net.params.size(), 0.0);
        if (outgoing_buffer.size() > 0)
            fisher = estimate_fisher_diagonal(a.net, outgoing_buffer, set.cfg.fisher_samples,
                                              set.cfg.dqn.gamma, rng);
        a.consolidations.push_back({a.net.params, std::move(fisher), set.current_task});
        a.net.pau_trainable = false;  // freeze adaptive activations
        a.mode = AnchorMode::EwcStable;
        a.ep_scores.clear();
        a.ep_completions.clear();
    }
    ++set.current_task;

    Anchor trial;
    trial.net = set.anchors[0].net;  // same architecture
    std::vector<const nn::QNetwork*> nets;
    std::vector<double> coeffs(set.anchors.size(), 1.0);
    for (const Anchor& a : set.anchors) nets.push_back(&a.net);
    trial.net.params = nn::average_weights(nets, coeffs);
    trial.net.pau_trainable = true;
    trial.net.revision = 0;
    if (set.cfg.dqn.use_target) trial.target = trial.net;
    trial.opt.lr = set.cfg.dqn.lr;
    trial.mode = AnchorMode::PauPlastic;
    trial.born_task = set.current_task;
    set.anchors.push_back(std::move(trial));
    set.act_rotation = 0;
    set.has_trial = true;
}

int cde_act(const SubspaceSet& set, std::span<const double> obs, double eps, bool eval, Rng& rng) {
    if (eval) {
        // Best mean completion this task; ties prefer the lower mean score.
        int best = 0;
        double best_completion = -1.0, best_score = 2.0;
        for (int i = 0; i < int(set.anchors.size()); ++i) {
            const Anchor& a = set.anchors[i];
            if (a.ep_completions.empty()) continue;
            double mc = std::accumulate(a.ep_completions.begin(), a.ep_completions.end(), 0.0) /
                        a.ep_completions.size();
            double ms =
                std::accumulate(a.ep_scores.begin(), a.ep_scores.end(), 0.0) / a.ep_scores.size();
            if (mc > best_completion + 1e-12 ||
                (std::abs(mc - best_completion) <= 1e-12 && ms < best_score)) {
                best = i;
                best_completion = mc;
                best_score = ms;
            }
        }
        return dqn::greedy_action(set.anchors[best].net, obs);
    }
    std::size_t idx = set.cfg.rotate_actions ? set.act_rotation % set.anchors.size()
                                             : rng.bounded(set.anchors.size());
    return dqn::select_action(set.anchors[idx].net, obs, eps, rng);
}

void record_episode(SubspaceSet& set, double score, double completion) {
    Anchor& a = set.rotation_anchor();
    a.ep_scores.push_back(score);
    a.ep_completions.push_back(completion);
    set.act_rotation = int((set.act_rotation + 1) % set.anchors.size());
}

std::vector<double> cde_learn(SubspaceSet& set, const std::vector<dqn::Transition>& batch) {
    std::vector<double> losses;
    losses.reserve(set.anchors.size());
    for (Anchor& a : set.anchors) {
        nn::QNetwork* target = a.target ? &*a.target : nullptr;
        if (a.mode == AnchorMode::PauPlastic || a.consolidations.empty()) {
            losses.push_back(dqn::td_update(a.net, target, batch, set.cfg.dqn, a.opt));
        } else {
            const double lambda = set.cfg.lambda;
            const auto& cons = a.consolidations;
            dqn::EwcHook hook = [&cons, lambda](const nn::QNetwork& net, nn::Gradients& g) {
                return ewc_penalty(net, cons, lambda, &g);
            };
            losses.push_back(dqn::td_update(a.net, target, batch, set.cfg.dqn, a.opt, &hook));
        }
    }
    return losses;
}

namespace {

double windowed_mean(const std::vector<double>& xs, int window) {
    const std::size_t n = std::min<std::size_t>(xs.size(), std::size_t(std::max(1, window)));
    double sum = 0.0;
    for (std::size_t i = xs.size() - n; i < xs.size(); ++i) sum += xs[i];
    return sum / double(n);
}

}  // namespace

double performance_W(const Anchor& anchor, int window) {
    if (anchor.ep_completions.empty())
        throw ClError(ClError::Code::NoData, "NO_DATA: anchor has no recorded episodes");
    return windowed_mean(anchor.ep_completions, window);
}

double performance_fallback(const Anchor& anchor, int window) {
    if (anchor.ep_scores.empty())
        throw ClError(ClError::Code::NoData, "NO_DATA: anchor has no recorded episodes");
    return 1.0 - windowed_mean(anchor.ep_scores, window);
}

void expansion_and_pruning(SubspaceSet& set) {
    if (!set.has_trial)
        throw ClError(ClError::Code::NoData, "NO_DATA: no trial anchor to evaluate");
    Anchor& trial = set.anchors.back();
    if (trial.ep_completions.empty())
        throw ClError(ClError::Code::NoData, "NO_DATA: trial anchor never acted");

    const int window = set.cfg.perf_window;
    const int incumbents = int(set.anchors.size()) - 1;
    auto completion_of = [&](const Anchor& a) {
        return a.ep_completions.empty() ? 0.0 : performance_W(a, window);
    };

    std::vector<double> w(set.anchors.size());
    for (int i = 0; i < int(set.anchors.size()); ++i) w[i] = completion_of(set.anchors[i]);
    // Completions carry no signal when every anchor ties; fall back to scores.
    const auto [mn, mx] = std::minmax_element(w.begin(), w.end());
    if (*mx - *mn < 1e-12) {
        for (int i = 0; i < int(set.anchors.size()); ++i) {
            const Anchor& a = set.anchors[i];
            w[i] = a.ep_scores.empty() ? 0.0 : performance_fallback(a, window);
        }
    }

    bool accept = true;
    for (int i = 0; i < incumbents; ++i)
        if (!(w[set.anchors.size() - 1] > set.cfg.accept_threshold * w[i])) {
            accept = false;
            break;
        }

    if (!accept) {
        set.anchors.pop_back();
    } else if (int(set.anchors.size()) > set.cfg.max_anchors) {
        // Remove the worst incumbent; ties drop the oldest.
        int victim = 0;
        for (int i = 1; i < incumbents; ++i) {
            if (w[i] < w[victim] - 1e-12 ||
                (std::abs(w[i] - w[victim]) <= 1e-12 &&
                 set.anchors[i].born_task < set.anchors[victim].born_task)) {
                victim = i;
            }
        }
        set.anchors.erase(set.anchors.begin() + victim);
    }
    set.has_trial = false;
    set.act_rotation = 0;
}

void save_subspace(const SubspaceSet& set, const std::string& path) {
    nlohmann::json header;
    header["current_task"] = set.current_task;
    header["act_rotation"] = set.act_rotation;
    header["has_trial"] = set.has_trial;
    header["cfg"] = {{"max_anchors", set.cfg.max_anchors},
                     {"accept_threshold", set.cfg.accept_threshold},
                     {"lambda", set.cfg.lambda},
                     {"fisher_samples", set.cfg.fisher_samples},
                     {"perf_window", set.cfg.perf_window},
                     {"rotate_actions", set.cfg.rotate_actions},
                     {"hidden", set.cfg.hidden}};
    nlohmann::json anchors = nlohmann::json::array();
    for (const Anchor& a : set.anchors) {
        nlohmann::json ja;
        ja["born_task"] = a.born_task;
        ja["mode"] = a.mode == AnchorMode::EwcStable ? "ewc_stable" : "pau_plastic";
        ja["ep_scores"] = a.ep_scores;
        ja["ep_completions"] = a.ep_completions;
        ja["has_target"] = a.target.has_value();
        ja["pau_trainable"] = a.net.pau_trainable;
        nlohmann::json tasks = nlohmann::json::array();
        for (const Consolidation& c : a.consolidations) tasks.push_back(c.task_id);
        ja["consolidation_tasks"] = tasks;
        ja["d_in"] = a.net.d_in;
        ja["d_out"] = a.net.d_out;
        ja["param_count"] = a.net.params.size();
        anchors.push_back(std::move(ja));
    }
    header["anchors"] = std::move(anchors);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ClError(ClError::Code::BadCheckpoint, "cannot open " + path);
    out << "RAILCDE 1\n" << header.dump() << "\n";
    auto write_block = [&out](const std::vector<double>& v) {
        out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(double)));
    };
    for (const Anchor& a : set.anchors) {
        write_block(a.net.params);
        if (a.target) write_block(a.target->params);
        for (const Consolidation& c : a.consolidations) {
            write_block(c.theta_star);
            write_block(c.fisher);
        }
    }
    if (!out) throw ClError(ClError::Code::BadCheckpoint, "short write to " + path);
}

SubspaceSet load_subspace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ClError(ClError::Code::BadCheckpoint, "cannot open " + path);
    std::string magic, header_line;
    std::getline(in, magic);
    if (magic != "RAILCDE 1")
        throw ClError(ClError::Code::BadCheckpoint, "bad checkpoint magic in " + path);
    std::getline(in, header_line);
    nlohmann::json header = nlohmann::json::parse(header_line, nullptr, false);
    if (header.is_discarded())
        throw ClError(ClError::Code::BadCheckpoint, "bad checkpoint header in " + path);

    SubspaceSet set;
    set.current_task = header.at("current_task");
    set.act_rotation = header.at("act_rotation");
    set.has_trial = header.at("has_trial");
    const auto& jc = header.at("cfg");
    set.cfg.max_anchors = jc.at("max_anchors");
    set.cfg.accept_threshold = jc.at("accept_threshold");
    set.cfg.lambda = jc.at("lambda");
    set.cfg.fisher_samples = jc.at("fisher_samples");
    set.cfg.perf_window = jc.at("perf_window");
    set.cfg.rotate_actions = jc.at("rotate_actions");
    set.cfg.hidden = jc.at("hidden").get<std::vector<int>>();

    auto read_block = [&in, &path](std::vector<double>& v) {
        in.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * sizeof(double)));
        if (std::size_t(in.gcount()) != v.size() * sizeof(double))
            throw ClError(ClError::Code::BadCheckpoint, "truncated checkpoint " + path);
    };
    for (const auto& ja : header.at("anchors")) {
        Anchor a;
        a.born_task = ja.at("born_task");
        a.mode = ja.at("mode") == "ewc_stable" ? AnchorMode::EwcStable : AnchorMode::PauPlastic;
        a.ep_scores = ja.at("ep_scores").get<std::vector<double>>();
        a.ep_completions = ja.at("ep_completions").get<std::vector<double>>();
        a.net = nn::mlp_init(ja.at("d_in"), set.cfg.hidden, ja.at("d_out"),
                             nn::ActivationSpec::pau_relu_init(ja.at("pau_trainable").get<bool>()), 0);
        a.net.pau_trainable = ja.at("pau_trainable");
        if (a.net.params.size() != ja.at("param_count").get<std::size_t>())
            throw ClError(ClError::Code::BadCheckpoint, "parameter count mismatch in " + path);
        read_block(a.net.params);
        if (ja.at("has_target").get<bool>()) {
            a.target = a.net;
            read_block(a.target->params);
        }
        for (int task_id : ja.at("consolidation_tasks")) {
            Consolidation c;
            c.task_id = task_id;
            c.theta_star.resize(a.net.params.size());
            c.fisher.resize(a.net.params.size());
            read_block(c.theta_star);
            read_block(c.fisher);
            a.consolidations.push_back(std::move(c));
        }
        a.opt.lr = set.cfg.dqn.lr;
        set.anchors.push_back(std::move(a));
    }
    if (set.anchors.empty())
        throw ClError(ClError::Code::BadCheckpoint, "checkpoint holds no anchors");
    return set;
}

}  // namespace rail::cl
