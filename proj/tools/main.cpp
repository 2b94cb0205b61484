#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return kitaev_bures::cli::run(argc, argv, std::cout, std::cerr); }
