#include <iostream>

#include "kani/cli.hpp"

int main(int argc, char** argv) { return kani::run_cli(argc, argv, std::cout, std::cerr); }
