#include <iostream>

#include "iognn/cli.hpp"

int main(int argc, char** argv) { return iognn::cli::run(argc, argv, std::cout, std::cerr); }
