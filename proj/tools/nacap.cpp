#include <string>
#include <vector>

#include "nacap/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return nacap::run_cli(args);
}
