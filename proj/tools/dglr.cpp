#include "dglr/cli.hpp"

int main(int argc, char** argv) { return dglr::cli::dispatch(argc, argv); }
