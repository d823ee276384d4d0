#include <iostream>
#include <string>
#include <vector>

#include "cmwnet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cmwnet::cli::run(args, std::cout, std::cerr);
}
