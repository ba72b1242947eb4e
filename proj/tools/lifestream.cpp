#include <iostream>

#include "lifestream/cli.hpp"

int main(int argc, char** argv) { return lifestream::run_cli(argc, argv, std::cout, std::cerr); }
