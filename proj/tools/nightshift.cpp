#include "nightshift/cli.hpp"

int main(int argc, char** argv) { return nightshift::cli_dispatch(argc, argv); }
