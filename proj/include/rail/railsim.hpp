#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rail/rng.hpp"
#include "rail/stage.hpp"

namespace rail::sim {

// Headings are compass directions. Row 0 is the north edge, so moving N
// decreases the row and moving E increases the column.
enum class Heading : std::uint8_t { N = 0, E = 1, S = 2, W = 3 };

constexpr Heading left_of(Heading h) { return Heading((int(h) + 3) % 4); }
constexpr Heading right_of(Heading h) { return Heading((int(h) + 1) % 4); }
constexpr Heading opposite(Heading h) { return Heading((int(h) + 2) % 4); }
constexpr int row_delta(Heading h) { return h == Heading::N ? -1 : h == Heading::S ? 1 : 0; }
constexpr int col_delta(Heading h) { return h == Heading::E ? 1 : h == Heading::W ? -1 : 0; }
char heading_char(Heading h);
std::optional<Heading> heading_from_char(char c);

struct Cell {
    int row = 0;
    int col = 0;
    bool operator==(const Cell&) const = default;
};

inline Cell neighbor(Cell c, Heading h) { return {c.row + row_delta(h), c.col + col_delta(h)}; }

// 16-bit transition mask. Bit (entry*4 + exit) set means a train that entered
// the cell while moving `entry` may leave it moving `exit`.
struct TransitionMap {
    std::uint16_t bits = 0;

    bool has(Heading entry, Heading exit) const {
        return bits & (1u << (int(entry) * 4 + int(exit)));
    }
    void set(Heading entry, Heading exit) { bits |= std::uint16_t(1u << (int(entry) * 4 + int(exit))); }
    // Exit headings legal for the given entry, as a 4-bit mask.
    unsigned exits_for(Heading entry) const { return (bits >> (int(entry) * 4)) & 0xFu; }
    bool empty() const { return bits == 0; }
};

struct SpawnPoint {
    Cell cell;
    Heading heading = Heading::E;
};

struct RailGrid {
    int width = 0;
    int height = 0;
    std::vector<TransitionMap> cells;  // row-major, height*width
    std::vector<SpawnPoint> spawn_points;
    std::vector<Cell> targets;

    bool in_bounds(Cell c) const {
        return c.row >= 0 && c.row < height && c.col >= 0 && c.col < width;
    }
    int index(Cell c) const { return c.row * width + c.col; }
    TransitionMap& at(Cell c) { return cells[index(c)]; }
    const TransitionMap& at(Cell c) const { return cells[index(c)]; }
};

enum class TrainStatus : std::uint8_t { Ready, Active, Done };

struct Train {
    int id = 0;
    Cell spawn{};
    Heading spawn_heading = Heading::E;
    Cell target{};
    std::uint8_t speed_den = 1;     // speed = 1/speed_den cells per tick
    std::uint8_t progress_num = 0;  // fractional cell progress = progress_num/speed_den
    Cell position{};                // meaningful only while Active
    Heading heading = Heading::E;
    TrainStatus status = TrainStatus::Ready;
    int malfunction_remaining = 0;
    std::optional<int> arrival_tick;

    double speed() const { return 1.0 / speed_den; }
    double speed_progress() const { return double(progress_num) / speed_den; }
};

struct HaltRange {
    int lo = 3;
    int hi = 20;
};

struct EnvState {
    RailGrid grid;
    std::vector<Train> trains;
    int tick = 0;
    int max_ticks = 0;
    double malfunction_rate = 0.0;
    HaltRange halt_range{};
    Rng rng{0};
    long illegal_actions = 0;  // illegal turns degraded to STOP
};

enum class Action : std::uint8_t { DoNothing = 0, TurnLeft = 1, Forward = 2, TurnRight = 3, Stop = 4 };
inline constexpr int kNumActions = 5;

struct StepResult {
    std::vector<double> rewards;  // indexed by train id
    bool done = false;
};

struct EpisodeLog {
    int num_agents = 0;
    int max_ticks = 0;
    std::vector<std::optional<int>> arrival_ticks;
    std::vector<double> tick_reward_sums;  // summed over trains, one entry per tick
};

struct Violation {
    Cell cell{};
    std::string what;
};

class SimError : public std::runtime_error {
public:
    enum class Code { InfeasibleSpec, EmptyEpisode, BadGridFile };
    SimError(Code code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

inline constexpr int kInfiniteDistance = std::numeric_limits<int>::max();

// --- topology -------------------------------------------------------------

// Assembles grids from undirected track edges; transition masks are derived
// uniformly afterwards (every approach may continue to any other connected
// side, reversal only at dead ends), which makes mask reciprocity hold by
// construction.
class GridBuilder {
public:
    GridBuilder(int width, int height);

    // Adds the track edge from `a` toward its neighbor in direction `d`.
    void link(Cell a, Heading d);
    // Straight run between two cells sharing a row or column.
    void link_run(Cell a, Cell b);
    bool has_track(Cell c) const;
    RailGrid finish(std::vector<SpawnPoint> spawns, std::vector<Cell> targets) const;

private:
    std::size_t idx(Cell c) const;
    int width_, height_;
    std::vector<std::uint8_t> conn_;
};

// Builds the family-specific topology plus the train roster for a stage.
// Throws SimError{InfeasibleSpec} when the spec cannot be realized.
std::pair<RailGrid, std::vector<Train>> generate_grid(const StageSpec& spec, std::uint64_t seed);

// Empty result iff all RailGrid invariants hold. Each entry names the cell
// and the failed check (mask reciprocity, bounds, spawn-target reachability).
std::vector<Violation> validate_grid(const RailGrid& grid);

// Minimal number of cell moves from (from, heading) to target over the
// directed graph induced by the transition masks; kInfiniteDistance if
// unreachable; 0 when from == target.
int shortest_path_distance(const RailGrid& grid, Cell from, Heading heading, Cell target);

// Distances from every (cell, heading) state to one target, built with a
// single reverse BFS. Used for observation features and oracle policies.
class DistanceField {
public:
    DistanceField() = default;
    DistanceField(const RailGrid& grid, Cell target);
    int at(Cell c, Heading h) const { return dist_[(std::size_t(c.row) * width_ + c.col) * 4 + int(h)]; }

private:
    int width_ = 0;
    std::vector<int> dist_;
};

// Versioned textual dump of (width, height, masks row-major, spawns, targets).
std::string serialize_grid(const RailGrid& grid);
RailGrid parse_grid(const std::string& text);  // throws SimError{BadGridFile}

// --- episode --------------------------------------------------------------

// Episode horizon rule: ceil(4*(width+height) / min train speed), which is
// exactly 4*(width+height)*max(speed_den).
int episode_horizon(int width, int height, const std::vector<Train>& trains);

// Fresh environment: all trains Ready at their spawns, tick 0, rng derived
// from seed so identical (spec, seed) produce bit-identical states.
EnvState reset(const StageSpec& spec, std::uint64_t seed);

// Advances one tick. `actions` is indexed by train id; missing entries act
// as DoNothing. Phases: malfunction bookkeeping, then motion in ascending
// id order (blocked trains stay put), then rewards and termination.
StepResult step(EnvState& state, const std::vector<Action>& actions);

// Trains that can never move again: every legal continuation is occupied by
// another train in the same stuck set (head-on pairs, cycles), plus trains
// whose every route to target passes through such a stuck cell. A train
// stopped only by a malfunction is not deadlocked.
std::vector<int> detect_deadlocks(const EnvState& state);

// (score, completion): completion = fraction of trains that arrived;
// score = mean over trains of min(arrival_tick, max_ticks)/max_ticks,
// in (0,1], lower is better.
std::pair<double, double> episode_score(const EpisodeLog& log);

}  // namespace rail::sim
