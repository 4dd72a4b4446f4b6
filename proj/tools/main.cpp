#include <iostream>
#include <string>
#include <vector>

#include "gazefusion/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return gazefusion::cli::run(args, std::cout, std::cerr);
}
