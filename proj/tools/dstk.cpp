#include "dstk/cli.hpp"

int main(int argc, char** argv) { return dstk::run_command(argc, argv); }
