#include "anyres/cli.hpp"

int main(int argc, char** argv) { return anyres::cli_main(argc, argv); }
