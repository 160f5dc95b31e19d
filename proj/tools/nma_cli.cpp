#include <nma/cli.hpp>

int main(int argc, char** argv) { return nma::cli::run(argc, argv); }
