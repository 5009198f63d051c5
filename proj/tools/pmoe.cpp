#include "pmoe/harness/cli.hpp"

int main(int argc, char** argv) { return pmoe::run_cli(argc, argv); }
