#include "ddvqa/cli.hpp"

int main(int argc, char** argv) { return ddvqa::cli::run(argc, argv); }
