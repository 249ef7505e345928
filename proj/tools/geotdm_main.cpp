#include <vector>

#include "geotdm/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return geotdm::run_cli(args);
}
