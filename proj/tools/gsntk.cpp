#include <gsntk/exp/cli.hpp>

int main(int argc, char** argv) { return gsntk::cli_main(argc, argv); }
