#include <string>
#include <vector>

#include "dm/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dm::cli::run(args);
}
