#include <iostream>
#include <string>
#include <vector>

#include "vidloop/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return vidloop::cli::run(args, std::cout, std::cerr);
}
