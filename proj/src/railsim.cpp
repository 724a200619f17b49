#include "rail/railsim.hpp"

#include <algorithm>
#include <bit>
#include <cassert>
#include <cctype>
#include <cmath>
#include <deque>
#include <sstream>

namespace rail::sim {

namespace {

constexpr std::uint64_t kGridStream = 0x67726964;  // stream salts for seed derivation
constexpr std::uint64_t kEnvStream = 0x656e76;

}  // namespace

std::string family_name(Family f) {
    switch (f) {
        case Family::Sparse: return "sparse";
        case Family::Pathfinding: return "pathfinding";
        case Family::Malfunction: return "malfunction";
        case Family::Deadlock: return "deadlock";
    }
    return "?";
}

std::optional<Family> family_from_name(const std::string& name) {
    std::string s;
    for (char c : name) s.push_back(char(std::tolower(static_cast<unsigned char>(c))));
    if (s == "sparse" || s == "sparse-generator") return Family::Sparse;
    if (s == "pathfinding") return Family::Pathfinding;
    if (s == "malfunction") return Family::Malfunction;
    if (s == "deadlock") return Family::Deadlock;
    return std::nullopt;
}

void validate_stage(const StageSpec& spec) {
    int sum = spec.speed_mix[0] + spec.speed_mix[1] + spec.speed_mix[2] + spec.speed_mix[3];
    if (sum != 100) throw std::invalid_argument("speed_mix must sum to 100, got " + std::to_string(sum));
    if (spec.network_steps < 0) throw std::invalid_argument("network_steps must be >= 0");
    if (spec.agents < 1) throw std::invalid_argument("agents must be >= 1");
    if (spec.width < 1 || spec.height < 1) throw std::invalid_argument("dimensions must be >= 1");
    if (spec.malf_num < 0 || spec.malf_den < 1 || spec.malf_num > spec.malf_den)
        throw std::invalid_argument("malfunction rate must be a probability");
}

char heading_char(Heading h) {
    switch (h) {
        case Heading::N: return 'N';
        case Heading::E: return 'E';
        case Heading::S: return 'S';
        case Heading::W: return 'W';
    }
    return '?';
}

std::optional<Heading> heading_from_char(char c) {
    switch (std::toupper(static_cast<unsigned char>(c))) {
        case 'N': return Heading::N;
        case 'E': return Heading::E;
        case 'S': return Heading::S;
        case 'W': return Heading::W;
    }
    return std::nullopt;
}

// --- track construction -----------------------------------------------------

GridBuilder::GridBuilder(int width, int height)
    : width_(width), height_(height), conn_(std::size_t(width) * height, 0) {}

std::size_t GridBuilder::idx(Cell c) const {
    assert(c.row >= 0 && c.row < height_ && c.col >= 0 && c.col < width_);
    return std::size_t(c.row) * width_ + c.col;
}

void GridBuilder::link(Cell a, Heading d) {
    Cell b = neighbor(a, d);
    conn_[idx(a)] |= std::uint8_t(1u << int(d));
    conn_[idx(b)] |= std::uint8_t(1u << int(opposite(d)));
}

void GridBuilder::link_run(Cell a, Cell b) {
    if (a.row == b.row) {
        int lo = std::min(a.col, b.col), hi = std::max(a.col, b.col);
        for (int c = lo; c < hi; ++c) link({a.row, c}, Heading::E);
    } else {
        int lo = std::min(a.row, b.row), hi = std::max(a.row, b.row);
        for (int r = lo; r < hi; ++r) link({r, a.col}, Heading::S);
    }
}

bool GridBuilder::has_track(Cell c) const { return conn_[idx(c)] != 0; }

RailGrid GridBuilder::finish(std::vector<SpawnPoint> spawns, std::vector<Cell> targets) const {
    RailGrid g;
    g.width = width_;
    g.height = height_;
    g.cells.resize(conn_.size());
    for (int r = 0; r < height_; ++r) {
        for (int c = 0; c < width_; ++c) {
            std::uint8_t conn = conn_[std::size_t(r) * width_ + c];
            if (!conn) continue;
            TransitionMap& m = g.cells[std::size_t(r) * width_ + c];
            int degree = std::popcount(unsigned(conn));
            for (int h = 0; h < 4; ++h) {
                Heading entry = Heading(h);
                if (!(conn & (1u << int(opposite(entry))))) continue;  // no approach from that side
                for (int d = 0; d < 4; ++d) {
                    if (!(conn & (1u << d))) continue;
                    if (degree > 1 && Heading(d) == opposite(entry)) continue;  // no mid-track reversal
                    m.set(entry, Heading(d));
                }
            }
        }
    }
    // Spawn cells sit at line ends; a train materializing there moves along
    // its spawn heading, so the cell needs entry bits for that heading too.
    for (const SpawnPoint& sp : spawns) {
        std::uint8_t conn = conn_[idx(sp.cell)];
        TransitionMap& m = g.cells[idx(sp.cell)];
        for (int d = 0; d < 4; ++d) {
            if (!(conn & (1u << d))) continue;
            if (Heading(d) == opposite(sp.heading) && std::popcount(unsigned(conn)) > 1) continue;
            m.set(sp.heading, Heading(d));
        }
    }
    g.spawn_points = std::move(spawns);
    g.targets = std::move(targets);
    return g;
}

namespace {

using TrackBuilder = GridBuilder;

[[noreturn]] void infeasible(const std::string& why) {
    throw SimError(SimError::Code::InfeasibleSpec, "INFEASIBLE_SPEC: " + why);
}

// Largest-remainder apportionment of `agents` over the four speed slots,
// then a seeded shuffle. Slots map to denominators {4, 3, 2, 1}.
std::vector<std::uint8_t> draw_speeds(const StageSpec& spec, Rng& rng) {
    const int dens[4] = {4, 3, 2, 1};
    int counts[4];
    int assigned = 0;
    double rem[4];
    for (int i = 0; i < 4; ++i) {
        double quota = spec.agents * spec.speed_mix[i] / 100.0;
        counts[i] = int(quota);
        rem[i] = quota - counts[i];
        assigned += counts[i];
    }
    while (assigned < spec.agents) {
        int best = 0;
        for (int i = 1; i < 4; ++i)
            if (rem[i] > rem[best] + 1e-12) best = i;
        ++counts[best];
        rem[best] = -1.0;
        ++assigned;
    }
    std::vector<std::uint8_t> speeds;
    for (int i = 0; i < 4; ++i)
        for (int k = 0; k < counts[i]; ++k) speeds.push_back(std::uint8_t(dens[i]));
    rng.shuffle(speeds);
    return speeds;
}

std::vector<Train> make_trains(const std::vector<SpawnPoint>& spawns, const std::vector<Cell>& targets,
                               const StageSpec& spec, Rng& rng) {
    std::vector<std::uint8_t> speeds = draw_speeds(spec, rng);
    std::vector<Train> trains(spec.agents);
    for (int i = 0; i < spec.agents; ++i) {
        Train& t = trains[i];
        t.id = i;
        t.spawn = spawns[i % spawns.size()].cell;
        t.spawn_heading = spawns[i % spawns.size()].heading;
        t.target = targets[i % targets.size()];
        t.speed_den = speeds[i];
        t.heading = t.spawn_heading;
    }
    return trains;
}

// Single main line with one or more detour loops; each junction offers a
// shorter direct continuation and a longer detour, giving at least two
// distinct spawn-target routes of different length.
std::pair<RailGrid, std::vector<Train>> generate_pathfinding(const StageSpec& spec, Rng& rng) {
    if (spec.width < 4 || spec.height < 4) infeasible("pathfinding requires at least 4x4");
    if (spec.agents != 1) infeasible("pathfinding stages carry a single agent");

    const int w = spec.width, h = spec.height;
    int main_row = rng.uniform_int(1, h - 2);
    int detours = std::clamp(1 + (w - 4) / 12, 1, 3);

    TrackBuilder tb(w, h);
    Cell spawn{main_row, 0};
    Cell target{main_row, w - 1};
    tb.link_run(spawn, target);

    // Disjoint [cs, ce] column spans, one per detour.
    int span = (w - 2) / detours;
    for (int k = 0; k < detours; ++k) {
        int lo = 1 + k * span;
        int hi = std::min(lo + span - 1, w - 2);
        int cs = lo, ce = hi;
        if (hi - lo >= 2) {
            cs = rng.uniform_int(lo, hi - 1);
            ce = rng.uniform_int(cs + 1, hi);
        }
        // Detour row above or below the main line, wherever room exists.
        bool up = main_row >= h / 2;
        if (main_row >= 2 && main_row <= h - 3) up = rng.bernoulli(0.5);
        int depth = rng.uniform_int(1, up ? main_row : (h - 1 - main_row));
        int detour_row = up ? main_row - depth : main_row + depth;
        tb.link_run({main_row, cs}, {detour_row, cs});
        tb.link_run({detour_row, cs}, {detour_row, ce});
        tb.link_run({detour_row, ce}, {main_row, ce});
    }

    RailGrid grid = tb.finish({{spawn, Heading::E}}, {target});
    std::vector<Train> trains = make_trains(grid.spawn_points, grid.targets, spec, rng);
    return {std::move(grid), std::move(trains)};
}

// Corridor with two adjacent parallel tracks joined by crossover columns;
// trains run west to east with mixed speeds, so faster trains must overtake
// through the other track.
std::pair<RailGrid, std::vector<Train>> generate_malfunction(const StageSpec& spec, Rng& rng) {
    if (spec.width < 6 || spec.height < 2) infeasible("malfunction corridor requires at least 6x2");

    const int w = spec.width, h = spec.height;
    int row_a = (h - 1) / 2;
    int row_b = row_a + 1;

    TrackBuilder tb(w, h);
    tb.link_run({row_a, 0}, {row_a, w - 1});
    tb.link_run({row_b, 0}, {row_b, w - 1});

    int n_cross = std::clamp(w / 4, 2, 5);
    std::vector<int> cols;
    for (int c = 1; c <= w - 2; ++c) cols.push_back(c);
    rng.shuffle(cols);
    cols.resize(n_cross);
    for (int c : cols) tb.link({row_a, c}, Heading::S);

    std::vector<SpawnPoint> spawns = {{{row_a, 0}, Heading::E}, {{row_b, 0}, Heading::E}};
    std::vector<Cell> targets = {{row_a, w - 1}, {row_b, w - 1}};
    RailGrid grid = tb.finish(spawns, targets);
    std::vector<Train> trains = make_trains(grid.spawn_points, grid.targets, spec, rng);
    return {std::move(grid), std::move(trains)};
}

// Two-track corridors where alternating trains drive opposing directions on
// a shared line; the only way to pass is through the crossover switches, and
// the switch count is the stage's difficulty knob.
std::pair<RailGrid, std::vector<Train>> generate_deadlock(const StageSpec& spec, Rng& rng) {
    if (spec.width < 8 || spec.height < 2) infeasible("deadlock corridor requires at least 8x2");

    const int w = spec.width, h = spec.height;
    const int pairs = h / 2;
    const int switches = std::max(1, spec.switches.value_or(2));
    if (switches > w - 4) infeasible("switch count does not fit corridor width");

    TrackBuilder tb(w, h);
    std::vector<SpawnPoint> spawns;
    std::vector<Cell> targets;
    for (int p = 0; p < pairs; ++p) {
        int ra = 2 * p, rb = 2 * p + 1;
        tb.link_run({ra, 0}, {ra, w - 1});
        tb.link_run({rb, 0}, {rb, w - 1});
        std::vector<int> cols;
        for (int c = 2; c <= w - 3; ++c) cols.push_back(c);
        rng.shuffle(cols);
        for (int k = 0; k < switches; ++k) tb.link({ra, cols[k]}, Heading::S);
        // Eastbound and westbound share row ra; rb is the passing loop.
        spawns.push_back({{ra, 0}, Heading::E});
        spawns.push_back({{ra, w - 1}, Heading::W});
        targets.push_back({ra, w - 1});
        targets.push_back({ra, 0});
    }

    RailGrid grid = tb.finish(spawns, targets);
    std::vector<Train> trains(spec.agents);
    std::vector<std::uint8_t> speeds = draw_speeds(spec, rng);
    for (int i = 0; i < spec.agents; ++i) {
        Train& t = trains[i];
        int slot = i % int(grid.spawn_points.size());
        t.id = i;
        t.spawn = grid.spawn_points[slot].cell;
        t.spawn_heading = grid.spawn_points[slot].heading;
        t.target = grid.targets[slot];
        t.speed_den = speeds[i];
        t.heading = t.spawn_heading;
    }
    return {std::move(grid), std::move(trains)};
}

// Lattice of a few full-width horizontal and full-height vertical lines with
// switch cells at every crossing. Spawns sit on line endpoints; each train is
// assigned a distinct far endpoint as target.
std::pair<RailGrid, std::vector<Train>> generate_sparse(const StageSpec& spec, Rng& rng) {
    if (spec.width < 6 || spec.height < 6) infeasible("sparse environment requires at least 6x6");

    const int w = spec.width, h = spec.height;
    int n_h = std::clamp(2 + h / 16, 2, 6);
    int n_v = std::clamp(2 + w / 16, 2, 6);

    auto pick_lines = [&rng](int count, int lo, int hi) {
        std::vector<int> all;
        for (int v = lo; v <= hi; ++v) all.push_back(v);
        rng.shuffle(all);
        all.resize(count);
        std::sort(all.begin(), all.end());
        return all;
    };
    std::vector<int> rows = pick_lines(n_h, 1, h - 2);
    std::vector<int> cols = pick_lines(n_v, 1, w - 2);

    TrackBuilder tb(w, h);
    for (int r : rows) tb.link_run({r, 0}, {r, w - 1});
    for (int c : cols) tb.link_run({0, c}, {h - 1, c});

    std::vector<SpawnPoint> endpoints;
    for (int r : rows) {
        endpoints.push_back({{r, 0}, Heading::E});
        endpoints.push_back({{r, w - 1}, Heading::W});
    }
    for (int c : cols) {
        endpoints.push_back({{0, c}, Heading::S});
        endpoints.push_back({{h - 1, c}, Heading::N});
    }
    rng.shuffle(endpoints);

    std::vector<Train> trains(spec.agents);
    std::vector<std::uint8_t> speeds = draw_speeds(spec, rng);
    std::vector<SpawnPoint> spawns;
    std::vector<Cell> targets;
    for (int i = 0; i < spec.agents; ++i) {
        const SpawnPoint& sp = endpoints[i % endpoints.size()];
        // Target: a different endpoint, not the spawn cell.
        Cell tgt;
        do {
            tgt = endpoints[rng.uniform_int(0, int(endpoints.size()) - 1)].cell;
        } while (tgt == sp.cell);
        Train& t = trains[i];
        t.id = i;
        t.spawn = sp.cell;
        t.spawn_heading = sp.heading;
        t.target = tgt;
        t.speed_den = speeds[i];
        t.heading = t.spawn_heading;
        spawns.push_back(sp);
        targets.push_back(tgt);
    }

    RailGrid grid = tb.finish(std::move(spawns), std::move(targets));
    return {std::move(grid), std::move(trains)};
}

}  // namespace

std::pair<RailGrid, std::vector<Train>> generate_grid(const StageSpec& spec, std::uint64_t seed) {
    if (spec.agents < 1) infeasible("at least one agent required");
    Rng rng(mix_seed(seed, kGridStream + std::uint64_t(spec.family)));
    std::pair<RailGrid, std::vector<Train>> out;
    switch (spec.family) {
        case Family::Pathfinding: out = generate_pathfinding(spec, rng); break;
        case Family::Malfunction: out = generate_malfunction(spec, rng); break;
        case Family::Deadlock: out = generate_deadlock(spec, rng); break;
        case Family::Sparse: out = generate_sparse(spec, rng); break;
    }
    // Every train must be able to reach its target from its spawn.
    for (const Train& t : out.second) {
        if (shortest_path_distance(out.first, t.spawn, t.spawn_heading, t.target) == kInfiniteDistance)
            infeasible("generated topology leaves train " + std::to_string(t.id) + " without a route");
    }
    return out;
}

std::vector<Violation> validate_grid(const RailGrid& grid) {
    std::vector<Violation> out;
    if (grid.width < 1 || grid.height < 1) {
        out.push_back({{0, 0}, "empty grid"});
        return out;
    }
    if (grid.cells.size() != std::size_t(grid.width) * grid.height) {
        out.push_back({{0, 0}, "cell array size does not match dimensions"});
        return out;
    }
    for (int r = 0; r < grid.height; ++r) {
        for (int c = 0; c < grid.width; ++c) {
            Cell cell{r, c};
            const TransitionMap& m = grid.at(cell);
            if (m.empty()) continue;
            unsigned all_exits = 0;
            for (int h = 0; h < 4; ++h) all_exits |= m.exits_for(Heading(h));
            for (int d = 0; d < 4; ++d) {
                if (!(all_exits & (1u << d))) continue;
                Heading dir = Heading(d);
                Cell nbr = neighbor(cell, dir);
                std::ostringstream what;
                if (!grid.in_bounds(nbr)) {
                    what << "exit " << heading_char(dir) << " leaves the grid";
                    out.push_back({cell, what.str()});
                } else if (grid.at(nbr).exits_for(dir) == 0) {
                    what << "exit " << heading_char(dir) << " not reciprocated by neighbor ("
                         << nbr.row << "," << nbr.col << ")";
                    out.push_back({cell, what.str()});
                }
            }
        }
    }
    for (const Cell& t : grid.targets)
        if (!grid.in_bounds(t)) out.push_back({t, "target out of bounds"});
    for (const SpawnPoint& s : grid.spawn_points) {
        if (!grid.in_bounds(s.cell)) {
            out.push_back({s.cell, "spawn out of bounds"});
            continue;
        }
        bool reaches_any = grid.targets.empty();
        for (const Cell& t : grid.targets)
            if (shortest_path_distance(grid, s.cell, s.heading, t) != kInfiniteDistance) {
                reaches_any = true;
                break;
            }
        if (!reaches_any) out.push_back({s.cell, "spawn cannot reach any target"});
    }
    return out;
}

int shortest_path_distance(const RailGrid& grid, Cell from, Heading heading, Cell target) {
    if (!grid.in_bounds(from) || !grid.in_bounds(target)) return kInfiniteDistance;
    if (from == target) return 0;
    const std::size_t n_states = std::size_t(grid.width) * grid.height * 4;
    std::vector<int> dist(n_states, -1);
    auto state = [&grid](Cell c, Heading h) { return std::size_t(grid.index(c)) * 4 + int(h); };
    std::deque<std::pair<Cell, Heading>> queue;
    dist[state(from, heading)] = 0;
    queue.emplace_back(from, heading);
    while (!queue.empty()) {
        auto [c, h] = queue.front();
        queue.pop_front();
        int d = dist[state(c, h)];
        unsigned exits = grid.at(c).exits_for(h);
        for (int e = 0; e < 4; ++e) {
            if (!(exits & (1u << e))) continue;
            Cell nbr = neighbor(c, Heading(e));
            if (!grid.in_bounds(nbr)) continue;
            if (nbr == target) return d + 1;
            std::size_t s = state(nbr, Heading(e));
            if (dist[s] != -1) continue;
            dist[s] = d + 1;
            queue.emplace_back(nbr, Heading(e));
        }
    }
    return kInfiniteDistance;
}

DistanceField::DistanceField(const RailGrid& grid, Cell target) : width_(grid.width) {
    const std::size_t n_states = std::size_t(grid.width) * grid.height * 4;
    dist_.assign(n_states, kInfiniteDistance);
    if (!grid.in_bounds(target)) return;
    auto state = [&grid](Cell c, Heading h) { return std::size_t(grid.index(c)) * 4 + int(h); };
    std::deque<std::pair<Cell, Heading>> queue;
    for (int h = 0; h < 4; ++h) {
        dist_[state(target, Heading(h))] = 0;
        queue.emplace_back(target, Heading(h));
    }
    // Predecessor of (c, d): the cell behind c along d, with any entry heading
    // whose mask allows exiting toward d.
    while (!queue.empty()) {
        auto [c, arrived] = queue.front();
        queue.pop_front();
        int d = dist_[state(c, arrived)];
        Cell prev = neighbor(c, opposite(arrived));
        if (!grid.in_bounds(prev)) continue;
        const TransitionMap& m = grid.at(prev);
        for (int h = 0; h < 4; ++h) {
            if (!m.has(Heading(h), arrived)) continue;
            std::size_t s = state(prev, Heading(h));
            if (dist_[s] != kInfiniteDistance) continue;
            dist_[s] = d + 1;
            queue.emplace_back(prev, Heading(h));
        }
    }
}

std::string serialize_grid(const RailGrid& grid) {
    std::ostringstream out;
    out << "railgrid 1\n" << grid.width << " " << grid.height << "\n";
    out << std::hex;
    for (int r = 0; r < grid.height; ++r) {
        for (int c = 0; c < grid.width; ++c) {
            if (c) out << " ";
            out << grid.cells[std::size_t(r) * grid.width + c].bits;
        }
        out << "\n";
    }
    out << std::dec;
    out << "spawns " << grid.spawn_points.size() << "\n";
    for (const SpawnPoint& s : grid.spawn_points)
        out << s.cell.row << " " << s.cell.col << " " << heading_char(s.heading) << "\n";
    out << "targets " << grid.targets.size() << "\n";
    for (const Cell& t : grid.targets) out << t.row << " " << t.col << "\n";
    return out.str();
}

RailGrid parse_grid(const std::string& text) {
    std::istringstream in(text);
    auto fail = [](const std::string& why) -> void {
        throw SimError(SimError::Code::BadGridFile, "grid parse error: " + why);
    };
    std::string tag;
    int version = 0;
    if (!(in >> tag >> version) || tag != "railgrid") fail("missing railgrid header");
    if (version != 1) fail("unsupported version " + std::to_string(version));
    RailGrid g;
    if (!(in >> g.width >> g.height) || g.width < 1 || g.height < 1) fail("bad dimensions");
    g.cells.resize(std::size_t(g.width) * g.height);
    in >> std::hex;
    for (auto& cell : g.cells) {
        unsigned bits;
        if (!(in >> bits) || bits > 0xFFFFu) fail("bad transition mask");
        cell.bits = std::uint16_t(bits);
    }
    in >> std::dec;
    std::size_t count = 0;
    if (!(in >> tag >> count) || tag != "spawns") fail("missing spawns section");
    g.spawn_points.resize(count);
    for (auto& s : g.spawn_points) {
        char hc;
        if (!(in >> s.cell.row >> s.cell.col >> hc)) fail("bad spawn entry");
        auto h = heading_from_char(hc);
        if (!h) fail("bad spawn heading");
        s.heading = *h;
    }
    if (!(in >> tag >> count) || tag != "targets") fail("missing targets section");
    g.targets.resize(count);
    for (auto& t : g.targets)
        if (!(in >> t.row >> t.col)) fail("bad target entry");
    return g;
}

int episode_horizon(int width, int height, const std::vector<Train>& trains) {
    int max_den = 1;
    for (const Train& t : trains) max_den = std::max(max_den, int(t.speed_den));
    return 4 * (width + height) * max_den;
}

EnvState reset(const StageSpec& spec, std::uint64_t seed) {
    if (spec.agents < 1)
        throw SimError(SimError::Code::EmptyEpisode, "EMPTY_EPISODE: stage has no agents");
    auto [grid, trains] = generate_grid(spec, seed);
    EnvState s;
    s.max_ticks = episode_horizon(grid.width, grid.height, trains);
    s.grid = std::move(grid);
    s.trains = std::move(trains);
    s.malfunction_rate = spec.malfunction_rate();
    s.rng = Rng(mix_seed(seed, kEnvStream));
    return s;
}

namespace {

// Exit heading requested by an action, if legal; nullopt means the move
// degrades to STOP. DoNothing follows the track: forward when possible, the
// unique exit otherwise (covers dead-end turnarounds), stop at a fork.
std::optional<Heading> resolve_exit(const RailGrid& grid, Cell pos, Heading heading, Action a,
                                    bool* illegal) {
    unsigned exits = grid.at(pos).exits_for(heading);
    auto legal = [&](Heading d) { return (exits & (1u << int(d))) != 0; };
    switch (a) {
        case Action::Forward:
            if (legal(heading)) return heading;
            *illegal = true;
            return std::nullopt;
        case Action::TurnLeft:
            if (legal(left_of(heading))) return left_of(heading);
            *illegal = true;
            return std::nullopt;
        case Action::TurnRight:
            if (legal(right_of(heading))) return right_of(heading);
            *illegal = true;
            return std::nullopt;
        case Action::DoNothing: {
            if (legal(heading)) return heading;
            if (std::popcount(exits) == 1) return Heading(std::countr_zero(exits));
            return std::nullopt;
        }
        case Action::Stop: return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace

StepResult step(EnvState& s, const std::vector<Action>& actions) {
    if (s.tick >= s.max_ticks) throw std::logic_error("step() after episode end");
    const int n = int(s.trains.size());

    std::vector<bool> was_done(n), halted(n, false);
    for (int i = 0; i < n; ++i) was_done[i] = s.trains[i].status == TrainStatus::Done;

    // Phase 1: malfunction counters tick down before motion; healthy active
    // trains may acquire a fresh halt. The acquisition tick counts as the
    // first halted tick, so a halt of h costs exactly h motion ticks.
    for (int i = 0; i < n; ++i) {
        Train& t = s.trains[i];
        if (t.status != TrainStatus::Active) continue;
        if (t.malfunction_remaining > 0) {
            --t.malfunction_remaining;
            halted[i] = true;
        } else if (s.malfunction_rate > 0 && s.rng.bernoulli(s.malfunction_rate)) {
            int h = s.rng.uniform_int(s.halt_range.lo, s.halt_range.hi);
            t.malfunction_remaining = h - 1;
            halted[i] = true;
        }
    }

    // Phase 2: motion, one pass in ascending id order. occ maps cell index to
    // the train currently holding it; a blocked train keeps its place.
    std::vector<int> occ(s.grid.cells.size(), -1);
    for (int i = 0; i < n; ++i)
        if (s.trains[i].status == TrainStatus::Active) occ[s.grid.index(s.trains[i].position)] = i;

    for (int i = 0; i < n; ++i) {
        Train& t = s.trains[i];
        Action a = i < int(actions.size()) ? actions[i] : Action::DoNothing;
        if (t.status == TrainStatus::Done) continue;

        if (t.status == TrainStatus::Ready) {
            // Movement actions pull a Ready train onto its spawn cell; it then
            // takes part in normal motion this same tick.
            if (a != Action::Forward && a != Action::TurnLeft && a != Action::TurnRight) continue;
            if (occ[s.grid.index(t.spawn)] != -1) continue;  // spawn blocked, stays off-map
            t.status = TrainStatus::Active;
            t.position = t.spawn;
            t.heading = t.spawn_heading;
            t.progress_num = 0;
            occ[s.grid.index(t.spawn)] = i;
        }

        if (halted[i] || a == Action::Stop) continue;  // progress frozen
        if (t.progress_num + 1 < t.speed_den) {
            ++t.progress_num;
            continue;
        }
        // Poised to move: resolve the requested transition.
        bool illegal = false;
        std::optional<Heading> exit = resolve_exit(s.grid, t.position, t.heading, a, &illegal);
        if (illegal) ++s.illegal_actions;
        if (!exit) continue;
        Cell dest = neighbor(t.position, *exit);
        if (!s.grid.in_bounds(dest) || occ[s.grid.index(dest)] != -1) continue;  // blocked, stays poised
        occ[s.grid.index(t.position)] = -1;
        t.position = dest;
        t.heading = *exit;
        t.progress_num = 0;
        if (dest == t.target) {
            t.status = TrainStatus::Done;
            t.arrival_tick = s.tick + 1;
        } else {
            occ[s.grid.index(dest)] = i;
        }
    }

#ifndef NDEBUG
    {  // cell exclusion: no two active trains share a cell
        std::vector<int> seen(s.grid.cells.size(), -1);
        for (const Train& t : s.trains) {
            if (t.status != TrainStatus::Active) continue;
            assert(seen[s.grid.index(t.position)] == -1 && "cell exclusion violated");
            seen[s.grid.index(t.position)] = t.id;
        }
    }
#endif

    // Phase 3: rewards and termination.
    StepResult res;
    res.rewards.resize(n);
    bool all_done = true;
    for (int i = 0; i < n; ++i) {
        res.rewards[i] = was_done[i] ? 0.0 : -1.0 / s.max_ticks;
        if (s.trains[i].status != TrainStatus::Done) all_done = false;
    }
    ++s.tick;
    res.done = all_done || s.tick == s.max_ticks;
    return res;
}

std::vector<int> detect_deadlocks(const EnvState& s) {
    const int n = int(s.trains.size());
    std::vector<int> occ(s.grid.cells.size(), -1);
    for (int i = 0; i < n; ++i)
        if (s.trains[i].status == TrainStatus::Active) occ[s.grid.index(s.trains[i].position)] = i;

    // Greatest fixed point: keep trains whose every legal continuation is a
    // cell held by another kept train. Trains outside the set might move and
    // free their neighbors, so their blockers are released too.
    std::vector<bool> stuck(n, false);
    for (int i = 0; i < n; ++i) stuck[i] = s.trains[i].status == TrainStatus::Active;
    bool changed = true;
    while (changed) {
        changed = false;
        for (int i = 0; i < n; ++i) {
            if (!stuck[i]) continue;
            const Train& t = s.trains[i];
            unsigned exits = s.grid.at(t.position).exits_for(t.heading);
            bool escapable = false;
            for (int d = 0; d < 4 && !escapable; ++d) {
                if (!(exits & (1u << d))) continue;
                Cell nbr = neighbor(t.position, Heading(d));
                if (!s.grid.in_bounds(nbr)) continue;
                int holder = occ[s.grid.index(nbr)];
                if (holder == -1 || !stuck[holder]) escapable = true;
            }
            if (escapable) {
                stuck[i] = false;
                changed = true;
            }
        }
    }

    std::vector<int> flagged;
    for (int i = 0; i < n; ++i)
        if (stuck[i]) flagged.push_back(i);
    if (flagged.empty()) return flagged;

    // Track-caused: mobile trains whose every route to target crosses a cell
    // held by the stuck set.
    std::vector<bool> blocked_cell(s.grid.cells.size(), false);
    for (int i : flagged) blocked_cell[s.grid.index(s.trains[i].position)] = true;
    for (int i = 0; i < n; ++i) {
        const Train& t = s.trains[i];
        if (stuck[i] || t.status != TrainStatus::Active) continue;
        // BFS over (cell, heading) avoiding stuck cells.
        const std::size_t n_states = s.grid.cells.size() * 4;
        std::vector<bool> seen(n_states, false);
        std::deque<std::pair<Cell, Heading>> queue;
        auto state = [&](Cell c, Heading h) { return std::size_t(s.grid.index(c)) * 4 + int(h); };
        seen[state(t.position, t.heading)] = true;
        queue.emplace_back(t.position, t.heading);
        bool reachable = t.position == t.target;
        while (!queue.empty() && !reachable) {
            auto [c, h] = queue.front();
            queue.pop_front();
            unsigned exits = s.grid.at(c).exits_for(h);
            for (int d = 0; d < 4; ++d) {
                if (!(exits & (1u << d))) continue;
                Cell nbr = neighbor(c, Heading(d));
                if (!s.grid.in_bounds(nbr) || blocked_cell[s.grid.index(nbr)]) continue;
                if (nbr == t.target) {
                    reachable = true;
                    break;
                }
                std::size_t st = state(nbr, Heading(d));
                if (!seen[st]) {
                    seen[st] = true;
                    queue.emplace_back(nbr, Heading(d));
                }
            }
        }
        if (!reachable) flagged.push_back(i);
    }
    std::sort(flagged.begin(), flagged.end());
    return flagged;
}

std::pair<double, double> episode_score(const EpisodeLog& log) {
    if (log.num_agents == 0 || log.max_ticks == 0) return {0.0, 0.0};
    int arrived = 0;
    double total = 0.0;
    for (const auto& a : log.arrival_ticks) {
        if (a.has_value()) {
            ++arrived;
            total += double(std::min(*a, log.max_ticks)) / log.max_ticks;
        } else {
            total += 1.0;
        }
    }
    double completion = double(arrived) / log.num_agents;
    double score = total / log.num_agents;
    return {score, completion};
}

}  // namespace rail::sim
