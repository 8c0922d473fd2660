#include "pcdf/cli.hpp"

int main(int argc, char** argv) { return pcdf::run_cli(argc, argv); }
