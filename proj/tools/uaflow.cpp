#include "uaflow/cli/app.hpp"

int main(int argc, char** argv) { return uaflow::cli::run(argc, argv); }
