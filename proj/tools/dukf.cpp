#include "dukf/cli.hpp"

int main(int argc, char** argv) { return dukf::cli::run_cli(argc, argv); }
