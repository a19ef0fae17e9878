#include "gtimm/cli.hpp"

int main(int argc, char** argv) { return gtimm::cli::run(argc, argv); }
