#include "rfbn/cli.hpp"

int main(int argc, char** argv) { return rfbn::cli::run(argc, argv); }
