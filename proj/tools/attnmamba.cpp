#include "attnmamba/cli.hpp"

int main(int argc, char** argv) { return attnmamba::cli::run(argc, argv); }
