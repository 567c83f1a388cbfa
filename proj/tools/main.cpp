#include <iostream>

#include "mlest/cli.hpp"

int main(int argc, char** argv) {
  return mlest::cli::run_cli(argc, argv, std::cout, std::cerr);
}
