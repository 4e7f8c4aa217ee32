#include "cli.hpp"

int main(int argc, char** argv) { return edsam::cli::run_cli(argc, argv); }
