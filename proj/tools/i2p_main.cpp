#include "i2p/cli.hpp"

int main(int argc, char** argv) { return i2p::cli::run(argc, argv); }
