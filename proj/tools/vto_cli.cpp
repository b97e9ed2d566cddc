#include "vto/cli.hpp"

int main(int argc, char** argv) { return vto::cli::dispatch(argc, argv); }
