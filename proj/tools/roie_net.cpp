#include <iostream>

#include "roie/cli.hpp"

int main(int argc, char** argv) {
  return roie::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
