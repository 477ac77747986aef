#include "chunkrl/harness.hpp"

int main(int argc, char** argv) {
    return chunkrl::harness::cli_main(argc, argv);
}
