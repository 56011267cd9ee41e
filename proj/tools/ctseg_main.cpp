#include "ctseg/cli.hpp"

int main(int argc, char** argv) { return ctseg::cli_main(argc, argv); }
