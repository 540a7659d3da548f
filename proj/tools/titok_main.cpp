#include "titok/cli.hpp"

int main(int argc, char** argv) { return titok::cli::run(argc, argv); }
