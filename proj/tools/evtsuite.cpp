#include <iostream>

#include "evtsuite/cli.hpp"

int main(int argc, char** argv) { return evtsuite::cli::main(argc, argv, std::cout, std::cerr); }
