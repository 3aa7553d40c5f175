// Regenerates the bundled desk-scale dataset under data/toy (or a chosen
// directory). The committed copy was produced with seed 1.

#include <iostream>
#include <string>

#include "trainext/toydata.hpp"

int main(int argc, char** argv) {
  std::string out = "data/toy";
  std::uint64_t seed = 1;
  if (argc > 1) out = argv[1];
  if (argc > 2) seed = std::stoull(argv[2]);
  trainext::toydata::generate(out, seed);
  std::cout << "toy dataset written to " << out << "\n";
  return 0;
}
