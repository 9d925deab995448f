#include <string>
#include <vector>

#include "scvae/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return scvae::run_cli(args);
}
