#include "uadbo/cli.hpp"

int main(int argc, char** argv) { return uadbo::cli::run_cli(argc, argv); }
