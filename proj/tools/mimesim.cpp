#include "mimesim/harness.hpp"

int main(int argc, char** argv) { return mimesim::run_cli(argc, argv); }
