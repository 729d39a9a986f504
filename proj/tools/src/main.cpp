#include <iostream>

#include "cdvae/cli.hpp"

int main(int argc, char** argv) { return cdvae::cli::run(argc, argv, std::cout, std::cerr); }
