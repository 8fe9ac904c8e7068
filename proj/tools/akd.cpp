#include <iostream>

#include "akd/cli.hpp"

int main(int argc, char** argv) { return akd::cli::main(argc, argv, std::cout, std::cerr); }
