#include <iostream>
#include <string>
#include <vector>

#include "cms_app/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cms::app::run_cli(args, std::cout, std::cerr);
}
