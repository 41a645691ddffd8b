#include <iostream>
#include <string>
#include <vector>

#include "moepath/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return moepath::run_cli(args, std::cout, std::cerr);
}
