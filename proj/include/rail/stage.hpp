#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace rail::sim {

enum class Family : std::uint8_t { Sparse, Pathfinding, Malfunction, Deadlock };

std::string family_name(Family f);
std::optional<Family> family_from_name(const std::string& name);

// One curriculum row: which environment family to generate, at what size,
// with how many trains, which speed mix, malfunction rate, and step budget.
//
// speed_mix holds four percentages summing to 100. Slots map left to right
// to speeds 1/4, 1/3, 1/2 and 1 (slowest first), so {0,0,0,100} means every
// train runs at full speed.
struct StageSpec {
    Family family = Family::Pathfinding;
    int width = 4;
    int height = 4;
    int agents = 1;
    std::array<int, 4> speed_mix{0, 0, 0, 100};
    int malf_num = 0;  // malfunction probability per train per tick = malf_num/malf_den
    int malf_den = 1;
    std::int64_t network_steps = 0;
    std::optional<int> switches;  // deadlock family: crossover count

    double malfunction_rate() const {
        return malf_den > 0 ? static_cast<double>(malf_num) / malf_den : 0.0;
    }
};

// Throws std::invalid_argument naming the violated invariant.
void validate_stage(const StageSpec& spec);

}  // namespace rail::sim
