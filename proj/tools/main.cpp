#include "cloud/cli.hpp"

int main(int argc, char** argv) { return cloud::cli::run_cli(argc, argv); }
