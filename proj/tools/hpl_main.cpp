#include <string>
#include <vector>

#include "hpl/cli_app.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return hpl::cli::run_cli(std::move(args));
}
