#include "clarify/harness.hpp"

int main(int argc, char** argv) { return clarify::harness::run_cli(argc, argv); }
