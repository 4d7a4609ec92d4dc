#include "invnets/cli.hpp"

int main(int argc, char** argv) { return invnets::cli::run(argc, argv); }
