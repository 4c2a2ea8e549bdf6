#include <iostream>

#include "proxigmm/cli.hpp"

int main(int argc, char** argv) { return proxigmm::run_cli(argc, argv, std::cout, std::cerr); }
