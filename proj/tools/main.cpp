#include "qmcssa/cli.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    return qmcssa::run_cli(argc, argv, std::cout, std::cerr);
}
