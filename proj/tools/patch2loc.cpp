#include <iostream>

#include "patch2loc/cli.hpp"

int main(int argc, char** argv) { return patch2loc::run_cli(argc, argv, std::cout, std::cerr); }
