#include "bnn/cli.hpp"

int main(int argc, char** argv) { return bnn::cli::run(argc, argv); }
