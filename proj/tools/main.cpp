#include "esir/cli.hpp"

int main(int argc, char** argv) { return esir::run_cli(argc, argv); }
