#include <iostream>

#include "chimle/commands.hpp"

int main(int argc, char** argv) { return chimle::run_cli(argc, argv, std::cout, std::cerr); }
