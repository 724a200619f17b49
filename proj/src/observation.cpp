#include "rail/observation.hpp"

#include <algorithm>
#include <deque>

namespace rail::obs {

using sim::Cell;
using sim::Heading;
using sim::Train;

int obs_dim(const ObsConfig& cfg) {
    if (cfg.branch_features < 1)
        throw ObsError(ObsError::Code::BadConfig, "BAD_CONFIG: branch feature count must be >= 1");
    if (cfg.global_features < 0)
        throw ObsError(ObsError::Code::BadConfig, "BAD_CONFIG: global feature count must be >= 0");
    return 3 * cfg.branch_features + cfg.global_features;
}

Observer::Observer(ObsConfig cfg, const sim::EnvState& state) : cfg_(cfg) {
    obs_dim(cfg_);  // validate
    for (const Train& t : state.trains) {
        std::pair<int, int> key{t.target.row, t.target.col};
        if (!fields_.count(key)) fields_.emplace(key, sim::DistanceField(state.grid, t.target));
    }
    visit_mark_.assign(state.grid.cells.size() * 4, 0);
    begin_tick(state);
}

const sim::DistanceField& Observer::field_for(Cell target) const {
    return fields_.at({target.row, target.col});
}

void Observer::begin_tick(const sim::EnvState& state) {
    deadlocked_ = sim::detect_deadlocks(state);
    occ_.assign(state.grid.cells.size(), -1);
    for (int i = 0; i < int(state.trains.size()); ++i)
        if (state.trains[i].status == sim::TrainStatus::Active)
            occ_[state.grid.index(state.trains[i].position)] = i;
}

FeatureVector Observer::observe(const sim::EnvState& state, int train_id) const {
    if (train_id < 0 || train_id >= int(state.trains.size()))
        throw ObsError(ObsError::Code::UnknownTrain, "UNKNOWN_TRAIN: " + std::to_string(train_id));
    const Train& train = state.trains[train_id];
    const sim::RailGrid& grid = state.grid;
    const double norm = grid.width + grid.height;
    const int lookahead = cfg_.lookahead > 0 ? cfg_.lookahead : grid.width + grid.height;
    const sim::DistanceField& field = field_for(train.target);

    const bool on_map = train.status == sim::TrainStatus::Active;
    const Cell pos = on_map ? train.position : train.spawn;
    const Heading heading = on_map ? train.heading : train.spawn_heading;

    std::vector<bool> dead_cell(grid.cells.size(), false);
    for (int id : deadlocked_)
        if (state.trains[id].status == sim::TrainStatus::Active)
            dead_cell[grid.index(state.trains[id].position)] = true;

    FeatureVector out;
    out.reserve(std::size_t(3 * cfg_.branch_features + cfg_.global_features));

    const Heading branches[3] = {sim::left_of(heading), heading, sim::right_of(heading)};
    const bool done = train.status == sim::TrainStatus::Done;
    for (Heading dir : branches) {
        double f[6] = {1.0, 0.0, 1.0, 0.0, 0.0, 0.0};
        bool legal = !done && (grid.at(pos).exits_for(heading) & (1u << int(dir)));
        if (legal) {
            Cell entry = neighbor(pos, dir);
            f[1] = 1.0;
            int d = field.at(entry, dir);
            f[0] = d == sim::kInfiniteDistance ? 1.0 : std::min(1.0, (1.0 + d) / norm);

            // Bounded BFS down the branch for nearby agents and stuck regions.
            ++visit_epoch_;
            std::deque<std::pair<std::pair<Cell, Heading>, int>> queue;
            auto state_idx = [&grid](Cell c, Heading h) { return std::size_t(grid.index(c)) * 4 + int(h); };
            visit_mark_[state_idx(entry, dir)] = visit_epoch_;
            queue.push_back({{entry, dir}, 1});
            int nearest = -1;
            bool opposing = false, slower = false, dead_region = false;
            while (!queue.empty()) {
                auto [cur, depth] = queue.front();
                queue.pop_front();
                auto [c, h] = cur;
                int holder = occ_[grid.index(c)];
                if (holder != -1 && holder != train_id) {
                    const Train& other = state.trains[holder];
                    if (nearest < 0) nearest = depth;
                    if (other.heading == sim::opposite(h)) opposing = true;
                    if (other.heading == h && other.speed_den > train.speed_den) slower = true;
                }
                if (dead_cell[grid.index(c)]) dead_region = true;
                if (depth >= lookahead) continue;
                unsigned exits = grid.at(c).exits_for(h);
                for (int e = 0; e < 4; ++e) {
                    if (!(exits & (1u << e))) continue;
                    Cell nbr = neighbor(c, Heading(e));
                    if (!grid.in_bounds(nbr)) continue;
                    std::size_t si = state_idx(nbr, Heading(e));
                    if (visit_mark_[si] == visit_epoch_) continue;
                    visit_mark_[si] = visit_epoch_;
                    queue.push_back({{nbr, Heading(e)}, depth + 1});
                }
            }
            f[2] = nearest < 0 ? 1.0 : std::min(1.0, double(nearest) / lookahead);
            f[3] = opposing ? 1.0 : 0.0;
            f[4] = slower ? 1.0 : 0.0;
            f[5] = dead_region ? 1.0 : 0.0;
        }
        for (int k = 0; k < cfg_.branch_features; ++k) out.push_back(k < 6 ? f[k] : 0.0);
    }

    double g[6] = {0, 0, 0, 0, 0, 0};
    if (!done) {
        int d = field.at(pos, heading);
        g[0] = d == sim::kInfiniteDistance ? 1.0 : std::min(1.0, double(d) / norm);
    }
    g[1] = train.speed();
    g[2] = state.halt_range.hi > 0
               ? std::min(1.0, double(train.malfunction_remaining) / state.halt_range.hi)
               : 0.0;
    g[3] = train.speed_progress();
    g[4] = state.max_ticks > 0 ? double(state.tick) / state.max_ticks : 0.0;
    g[5] = on_map ? 1.0 : 0.0;
    for (int k = 0; k < cfg_.global_features; ++k) out.push_back(k < 6 ? g[k] : 0.0);

    return out;
}

}  // namespace rail::obs
