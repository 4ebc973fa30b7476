#include <string>
#include <vector>

#include "cacs/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cacs::cli::run(args);
}
