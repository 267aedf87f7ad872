// Writes a store of seeded synthetic raw records for trying the CLI.
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sleepnet/records.hpp"
#include "sleepnet/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate synthetic raw PSG records"};
  std::string dir = "raw";
  int records = 6;
  int epochs = 60;
  std::uint64_t seed = 1;
  app.add_option("--dir", dir, "Output store")->capture_default_str();
  app.add_option("--records", records, "Number of records")->capture_default_str();
  app.add_option("--epochs", epochs, "30 s epochs per record")->capture_default_str();
  app.add_option("--seed", seed, "Seed")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  for (int r = 0; r < records; ++r) {
    char id[32];
    std::snprintf(id, sizeof id, "rec%03d", r + 1);
    const auto rec = sleepnet::synthetic::record(id, static_cast<std::size_t>(epochs), seed * 1000 + static_cast<std::uint64_t>(r));
    sleepnet::save_record(rec, std::filesystem::path(dir) / id);
    std::cout << id << '\n';
  }
  return 0;
}
