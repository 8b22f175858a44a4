#include "hybrid_ecm/cli.hpp"

int main(int argc, char** argv) { return hybrid_ecm::run_cli(argc, argv); }
