#include "magiceye/cli.hpp"

int main(int argc, char** argv) { return magiceye::cli::run(argc, argv); }
