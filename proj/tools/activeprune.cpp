#include <iostream>

#include "activeprune/app.hpp"

int main(int argc, char** argv) { return activeprune::app::run_cli(argc, argv, std::cout, std::cerr); }
