#include "cli.hpp"

int main(int argc, char** argv) { return deco::run_cli(argc, argv); }
