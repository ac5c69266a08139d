#include <iostream>

#include "dpm/cli.hpp"

int main(int argc, char** argv) {
  return dpm::cli::run(argc, argv, std::cout, std::cerr);
}
