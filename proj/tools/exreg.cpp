#include <iostream>

#include "exreg/cli.hpp"

int main(int argc, char** argv) { return exreg::cli::run(argc, argv, std::cout, std::cerr); }
