// SPDX-License-Identifier: Apache-2.0
#include "vitcomer/cli.hpp"

int main(int argc, char** argv) { return vitcomer::run_cli(argc, argv); }
