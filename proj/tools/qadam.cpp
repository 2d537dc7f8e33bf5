#include <iostream>

#include "qadam/harness.hpp"

int main(int argc, char** argv) { return qadam::run_cli(argc, argv, std::cout, std::cerr); }
