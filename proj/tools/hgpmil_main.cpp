#include <iostream>

#include "hgpmil/cli.hpp"

int main(int argc, char** argv) {
    return hgpmil::cli::dispatch(argc, argv, std::cout, std::cerr);
}
