#include "spnn/cli.hpp"

int main(int argc, char** argv) { return spnn::cli::cli_main(argc, argv); }
