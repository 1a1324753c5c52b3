#include <iostream>

#include "sysid/cli.hpp"

int main(int argc, char** argv) {
  return sysid::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
