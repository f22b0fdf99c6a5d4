#include "commands.hpp"

int main(int argc, char** argv) { return provenance::cli::run_cli(argc, argv); }
