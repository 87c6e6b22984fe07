#include <iostream>

#include "deepwound/cli.hpp"

int main(int argc, char** argv) { return deepwound::cli::run(argc, argv, std::cout, std::cerr); }
