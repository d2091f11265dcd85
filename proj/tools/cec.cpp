#include "cec/cli.hpp"

int main(int argc, char** argv) { return cec::run_cli(argc, argv); }
