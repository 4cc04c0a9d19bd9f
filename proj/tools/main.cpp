#include "baryir/cli.hpp"

int main(int argc, char** argv) { return baryir::cli::cli_main(argc, argv); }
