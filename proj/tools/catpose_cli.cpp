#include "catpose/cli.hpp"

int main(int argc, char** argv) { return catpose::cli::run(argc, argv); }
