#include <iostream>

#include "kdmot/cli.hpp"

int main(int argc, char** argv) {
  return kdmot::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
