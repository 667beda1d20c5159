#include "cotext/cli.hpp"

int main(int argc, char** argv) { return cotext::cli::dispatch(argc, argv); }
