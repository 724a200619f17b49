#include <fstream>

#include "json.hpp"

#include "rail/harness.hpp"

namespace rail::harness {

using curriculum::RunResult;
using nlohmann::json;

namespace {
constexpr int kMetricsVersion = 1;
}

void write_metrics(const RunResult& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw HarnessError(HarnessError::Code::IoError, "IO_ERROR: cannot open " + path);

    json header{{"record", "header"},     {"version", kMetricsVersion},
                {"algo", r.algo},         {"curriculum", r.curriculum_name},
                {"seed", r.seed},         {"fingerprint", r.config_fingerprint}};
    out << header.dump() << "\n";
    for (const auto& e : r.episodes) {
        json j{{"record", "episode"},   {"stage", e.stage},
               {"episode", e.episode_in_stage}, {"family", e.family},
               {"steps", e.steps},      {"score", e.score},
               {"completion", e.completion},   {"epsilon", e.epsilon},
               {"anchors", e.anchors},  {"global_step", e.global_step}};
        out << j.dump() << "\n";
    }
    for (const auto& p : r.probes) {
        json j{{"record", "probe"}, {"stage", p.stage},           {"at_step", p.at_step},
               {"env", p.env},      {"score", p.score},           {"completion", p.completion}};
        out << j.dump() << "\n";
    }
    for (const auto& b : r.boundaries) {
        json j{{"record", "boundary"},
               {"stage", b.stage},
               {"buffer_before", b.buffer_before},
               {"buffer_after", b.buffer_after},
               {"anchors_after", b.anchors_after}};
        out << j.dump() << "\n";
    }
    json eval{{"record", "eval"},
              {"episodes", r.final_eval.episodes},
              {"score_mean", r.final_eval.score_mean},
              {"score_sd", r.final_eval.score_sd},
              {"completion_mean", r.final_eval.completion_mean},
              {"completion_sd", r.final_eval.completion_sd}};
    out << eval.dump() << "\n";
    // wall_seconds is the one timestamp-like field; it lives in the footer so
    // otherwise-identical runs produce identical files above this line.
    json footer{{"record", "footer"},
                {"episodes", r.episodes.size()},
                {"probes", r.probes.size()},
                {"boundaries", r.boundaries.size()},
                {"total_env_steps", r.total_env_steps},
                {"total_updates", r.total_updates},
                {"final_consolidations", r.final_consolidations},
                {"final_anchors", r.final_anchors},
                {"wall_seconds", r.wall_seconds}};
    out << footer.dump() << "\n";
    if (!out) throw HarnessError(HarnessError::Code::IoError, "IO_ERROR: short write to " + path);
}

RunResult read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw HarnessError(HarnessError::Code::IoError, "IO_ERROR: cannot open " + path);

    RunResult r;
    std::string line;
    int record_idx = 0;
    bool saw_header = false, saw_footer = false;
    auto fail = [&record_idx](const std::string& why) -> void {
        throw HarnessError(HarnessError::Code::IoError,
                           "IO_ERROR: record " + std::to_string(record_idx) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++record_idx;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) fail("malformed JSON");
        const std::string kind = j.value("record", "");
        if (kind == "header") {
            if (j.value("version", -1) != kMetricsVersion) fail("unsupported metrics version");
            r.algo = j.at("algo");
            r.curriculum_name = j.at("curriculum");
            r.seed = j.at("seed");
            r.config_fingerprint = j.at("fingerprint");
            saw_header = true;
        } else if (kind == "episode") {
            curriculum::EpisodeRecord e;
            e.stage = j.at("stage");
            e.episode_in_stage = j.at("episode");
            e.family = j.at("family");
            e.steps = j.at("steps");
            e.score = j.at("score");
            e.completion = j.at("completion");
            e.epsilon = j.at("epsilon");
            e.anchors = j.at("anchors");
            e.global_step = j.at("global_step");
            r.episodes.push_back(e);
        } else if (kind == "probe") {
            curriculum::ProbeRecord p;
            p.stage = j.at("stage");
            p.at_step = j.at("at_step");
            p.env = j.at("env");
            p.score = j.at("score");
            p.completion = j.at("completion");
            r.probes.push_back(p);
        } else if (kind == "boundary") {
            curriculum::BoundaryEvent b;
            b.stage = j.at("stage");
            b.buffer_before = j.at("buffer_before");
            b.buffer_after = j.at("buffer_after");
            b.anchors_after = j.at("anchors_after");
            r.boundaries.push_back(b);
        } else if (kind == "eval") {
            r.final_eval.episodes = j.at("episodes");
            r.final_eval.score_mean = j.at("score_mean");
            r.final_eval.score_sd = j.at("score_sd");
            r.final_eval.completion_mean = j.at("completion_mean");
            r.final_eval.completion_sd = j.at("completion_sd");
        } else if (kind == "footer") {
            if (j.at("episodes").get<std::size_t>() != r.episodes.size() ||
                j.at("probes").get<std::size_t>() != r.probes.size())
                fail("footer counts do not match records");
            r.total_env_steps = j.at("total_env_steps");
            r.total_updates = j.at("total_updates");
            r.final_consolidations = j.at("final_consolidations");
            r.final_anchors = j.at("final_anchors");
            r.wall_seconds = j.at("wall_seconds");
            saw_footer = true;
        } else {
            fail("unknown record kind '" + kind + "'");
        }
    }
    if (!saw_header) fail("missing header record");
    if (!saw_footer) fail("missing footer record (truncated file)");
    return r;
}

}  // namespace rail::harness
