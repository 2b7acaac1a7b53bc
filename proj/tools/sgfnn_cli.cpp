#include "sgfnn/cli.hpp"

int main(int argc, char** argv) { return sgfnn::cli::run(argc, argv); }
