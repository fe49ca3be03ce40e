#include "cdr3gen/cli.hpp"

int main(int argc, char** argv) { return cdr3gen::cli::run(argc, argv); }
