#include <iostream>
#include <string>
#include <vector>

#include "eedkit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return eedkit::run_cli(args, std::cout, std::cerr);
}
