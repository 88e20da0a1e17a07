#include "corpipe/cli.hpp"

int main(int argc, char** argv) { return corpipe::cli::run(argc, argv); }
