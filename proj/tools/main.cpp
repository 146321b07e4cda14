// SPDX-License-Identifier: Apache-2.0
#include "moesched/cli.hpp"

int main(int argc, char** argv) {
    return moesched::run_cli(argc, argv);
}
