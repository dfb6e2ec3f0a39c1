#include <iostream>

#include "jst/cli/cli.hpp"

int main(int argc, char** argv) { return jst::cli::run(argc, argv, std::cout, std::cerr); }
