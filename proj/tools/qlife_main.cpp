#include "qlife/commands.hpp"

int main(int argc, char** argv) { return qlife::cli::run_cli(argc, argv); }
