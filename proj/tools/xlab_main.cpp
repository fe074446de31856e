#include <iostream>

#include "eclab/xlab/cli.hpp"

int main(int argc, char** argv) { return eclab::xlab::run_cli(argc, argv, std::cout, std::cerr); }
