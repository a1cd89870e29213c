#include <iostream>
#include <vector>

#include "mmadapt/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return mmadapt::cli::run(args, std::cout, std::cerr);
}
