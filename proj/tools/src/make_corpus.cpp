// Writes a synthetic English-like byte corpus for training and calibration.
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "bip/textgen.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a seeded English-like text corpus", "bip-corpus"};
  std::size_t bytes = 1 << 20;
  std::uint64_t seed = 0;
  std::string out;
  app.add_option("--bytes", bytes)->capture_default_str();
  app.add_option("--seed", seed)->capture_default_str();
  app.add_option("--out", out)->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  const std::string text = bip::textgen::generate(bytes, seed);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) {
    std::cerr << "error: failed writing " << out << '\n';
    return 1;
  }
  return 0;
}
