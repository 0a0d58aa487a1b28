#include <iostream>

#include "retina/cli/app.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return retina::cli::run(args, std::cout, std::cerr);
}
