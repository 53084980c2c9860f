#include <iostream>

#include "girder/cli.hpp"

int main(int argc, char** argv) { return girder::cli::run(argc, argv, std::cout, std::cerr); }
