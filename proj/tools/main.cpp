#include "cli.hpp"

int main(int argc, char** argv) { return lnpde::cli::main_entry(argc, argv); }
