#include "msin/cli.hpp"

int main(int argc, char** argv) { return msin::run_cli(argc, argv); }
