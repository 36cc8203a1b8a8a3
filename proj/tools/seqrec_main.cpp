#include "seqrec/cli.hpp"

int main(int argc, char** argv) { return seqrec::run_cli(argc, argv); }
