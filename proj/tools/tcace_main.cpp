#include "tcace/cli.hpp"

int main(int argc, char** argv) { return tcace::run_cli(argc, argv); }
