// SPDX-License-Identifier: Apache-2.0
// mtrlab <command> --config <path> [--out <dir>] [--seed <u64>] [--workers <n>]
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "mtrlab/mtrlab.h"

namespace {

void print_line(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task adversarial robustness lab"};
  app.set_version_flag("--version", std::string(mtr_version()));
  std::string command, config_path, out_dir = ".";
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool quiet = false;
  app.add_option("command", command, std::string("One of:\n") + mtr_command_names())->required();
  app.add_option("--config", config_path, "JSON config file")->required();
  app.add_option("--out", out_dir, "Output directory (created if missing)");
  auto* seed_opt = app.add_option("--seed", seed, "Override the command's seeds");
  auto* workers_opt = app.add_option("--workers", workers, "Concurrent training cells")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", quiet, "Suppress progress lines");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : mtr_exit_code(MTR_CONFIG_ERROR);
  }

  mtr_tune_allocator();
  std::ifstream in(config_path, std::ios::binary);
  if (!in) {
    std::fprintf(stderr, "mtrlab: cannot read config '%s'\n", config_path.c_str());
    return mtr_exit_code(MTR_CONFIG_ERROR);
  }
  std::ostringstream text;
  text << in.rdbuf();

  const mtr_status s = mtr_run_command(command.c_str(), text.str().c_str(), out_dir.c_str(), seed_opt->count() > 0,
                                       seed, workers_opt->count() > 0, workers, quiet ? nullptr : print_line, nullptr);
  if (s != MTR_OK) {
    std::fprintf(stderr, "mtrlab %s: %s: %s\n", command.c_str(), mtr_status_name(s), mtr_last_error());
  }
  return mtr_exit_code(s);
}
