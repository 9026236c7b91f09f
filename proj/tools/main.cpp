#include <iostream>

#include "mbvs/cli.hpp"

int main(int argc, char** argv) { return mbvs::run_cli(argc, argv, std::cout, std::cerr); }
