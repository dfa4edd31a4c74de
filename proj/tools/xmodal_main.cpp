#include <iostream>

#include "xmodal/cli.hpp"

int main(int argc, char** argv) { return xmodal::run_cli(argc, argv, std::cout, std::cerr); }
