#include "pcdc/harness.hpp"

int main(int argc, char** argv) { return pcdc::run_cli(argc, argv); }
