#include "cli.hpp"

int main(int argc, char** argv) { return qnet::cli::run({argv + 1, argv + argc}); }
