#include <iostream>

#include "vseg_cli/cli.hpp"

int main(int argc, char** argv) { return vseg::cli::run(argc, argv, std::cout, std::cerr); }
