#include "stlgsl/cli.hpp"

int main(int argc, char** argv) { return stlgsl::cli::run(argc, argv); }
