// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "shallowpi/commands.hpp"

int main(int argc, char** argv) { return shallowpi::cli::run_cli(argc, argv, std::cout, std::cerr); }
