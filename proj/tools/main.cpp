#include <iostream>

#include "dro/cli/commands.hpp"

int main(int argc, char** argv) { return dro::cli::run_cli(argc, argv, std::cout, std::cerr); }
