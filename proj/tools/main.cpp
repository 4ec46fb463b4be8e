#include <iostream>

#include "xret/cli.hpp"

int main(int argc, char** argv) { return xret::run_cli(argc, argv, std::cout, std::cerr); }
