// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "fastmetro/cli.hpp"

int main(int argc, char** argv) {
  return fastmetro::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
