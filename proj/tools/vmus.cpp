#include <iostream>

#include "vmus/cli.hpp"

int main(int argc, char** argv) {
    vmus::tune_allocator();
    return vmus::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
