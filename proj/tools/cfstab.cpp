#include <iostream>

#include "cfstab/cli.hpp"

int main(int argc, char** argv) { return cfstab::run_cli(argc, argv, std::cout, std::cerr); }
