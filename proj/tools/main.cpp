#include "cli.hpp"

int main(int argc, char** argv) {
  return hiermeta::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
