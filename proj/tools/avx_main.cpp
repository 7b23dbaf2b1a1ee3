#include <iostream>

#include "avx/cli.hpp"

int main(int argc, char** argv) { return avx::run_cli(argc, argv, std::cout, std::cerr); }
