#include "tcnbind/cli.hpp"

int main(int argc, char** argv) { return tcnbind::cli::run(argc, argv); }
