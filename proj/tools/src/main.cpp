#include <iostream>
#include <string>
#include <vector>

#include "bip/runtime.hpp"
#include "cli.hpp"

int main(int argc, char** argv) {
  bip::retain_heap_memory();
  return bip::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
