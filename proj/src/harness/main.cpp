#include <string>
#include <vector>

#include "rav/harness/harness.hpp"

int main(int argc, char** argv) {
  return rav::harness::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
