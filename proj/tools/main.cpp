#include "cli.hpp"

int main(int argc, char** argv) { return metasysid::cli::run(argc, argv); }
