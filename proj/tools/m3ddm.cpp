// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "m3d/cli.hpp"

int main(int argc, char** argv) { return m3d::cli_dispatch(argc, argv, std::cout, std::cerr); }
