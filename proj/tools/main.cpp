#include <triq/cli.hpp>

int main(int argc, char** argv) { return triq::cli_main(argc, argv); }
