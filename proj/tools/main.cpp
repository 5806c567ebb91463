#include "erw/cli.hpp"

int main(int argc, char** argv) { return erw::run_cli(argc, argv); }
