#include <iostream>

#include "spinresolft/cli.hpp"

int main(int argc, char** argv) { return spinresolft::run_cli(argc, argv, std::cout, std::cerr); }
