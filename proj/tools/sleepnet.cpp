#include "sleepnet/cli.hpp"

int main(int argc, char** argv) { return sleepnet::run_cli(argc, argv); }
