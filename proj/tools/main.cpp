#include <iostream>
#include <string>
#include <vector>

#include "camgauge/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return camgauge::dispatch(args, std::cout, std::cerr);
}
