#include <iostream>

#include "plenocal/cli.hpp"

int main(int argc, char** argv) { return plenocal::run_cli(argc, argv, std::cout, std::cerr); }
