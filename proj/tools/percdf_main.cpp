#include "percdf/cli.hpp"

int main(int argc, char** argv) { return percdf::cli::run(argc, argv); }
