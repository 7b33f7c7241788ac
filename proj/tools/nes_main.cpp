#include "nes/cli.hpp"

int main(int argc, char** argv) { return nes::cli::run(argc, argv); }
