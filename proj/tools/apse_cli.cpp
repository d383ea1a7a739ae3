#include <iostream>

#include "apse/cli.hpp"

int main(int argc, char** argv) { return apse::run_cli(argc, argv, std::cout, std::cerr); }
