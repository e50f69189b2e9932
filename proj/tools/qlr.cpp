#include "qlr/cli.hpp"

int main(int argc, char **argv) { return qlr::cli::main(argc, argv); }
