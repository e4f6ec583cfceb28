#include "experiments.hpp"

int main(int argc, char** argv) { return ntkreg::exp::run_cli(argc, argv); }
