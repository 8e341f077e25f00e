#include <iostream>

#include "gec/cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return gec::cli::run(args, std::cout, std::cerr);
}
