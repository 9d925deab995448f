#ifndef SCVAE_CLI_HPP
#define SCVAE_CLI_HPP

#include <string>
#include <vector>

namespace scvae {

// Command-line entry point. args excludes the program name. Returns 0 on
// success, 1 on runtime errors (message on stderr), 2 on usage errors.
int run_cli(const std::vector<std::string>& args);

}  // namespace scvae

#endif
