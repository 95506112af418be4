#include "arnet/cli.hpp"

int main(int argc, char** argv) { return arnet::cli_main(argc, argv); }
