#include <iostream>

#include "mamforge/cli.hpp"

int main(int argc, char** argv) { return mamforge::cli::run(argc, argv, std::cout, std::cerr); }
