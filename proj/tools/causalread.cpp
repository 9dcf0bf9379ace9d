#include <iostream>
#include <string>
#include <vector>

#include "causalread/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return causalread::cli::run(std::move(args), std::cout, std::cerr);
}
