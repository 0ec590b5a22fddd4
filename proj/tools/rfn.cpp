#include <string>
#include <vector>

#include "rfn/cli/run.hpp"

int main(int argc, char** argv) {
  return rfn::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
