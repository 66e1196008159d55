#include "lasp/cli.hpp"

int main(int argc, char** argv) { return lasp::run_cli(argc, argv); }
