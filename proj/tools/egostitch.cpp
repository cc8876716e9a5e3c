#include "egostitch/cli.hpp"

int main(int argc, char** argv) { return egostitch::cli::run(argc, argv); }
