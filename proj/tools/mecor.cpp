#include <iostream>

#include "mecor/cli.hpp"

int main(int argc, char** argv) { return mecor::cli::run(argc, argv, std::cout, std::cerr); }
