#include <iostream>
#include <string>
#include <vector>

#include "pb4u/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return pb4u::run_cli(args, std::cout, std::cerr);
}
