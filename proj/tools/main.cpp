#include "bmoe/cli.hpp"

int main(int argc, char** argv) { return bmoe::cli::run(argc, argv); }
