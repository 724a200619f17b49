#include <vector>

#include "rail/harness.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return rail::harness::cli(args);
}
