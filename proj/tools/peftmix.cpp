// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <vector>

#include "peftmix/cli.hpp"

int main(int argc, char** argv) {
  return peftmix::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
