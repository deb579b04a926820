#pragma once

#include <map>
#include <string>
#include <vector>

#include "rtc/common.h"

namespace rtc {

// One parsed invocation: subcommand, common flags and the per-command rest.
struct CommandSpec {
  std::string command;
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::pair<std::string, std::string>> overrides;  // --set k=v
  std::map<std::string, std::string> extras;  // remaining --flag value pairs
};

CommandSpec parse_command(const std::vector<std::string>& args);

// Dotted-path override: "net.codebook_size=64" digs through nested objects.
// The value is parsed as JSON when possible, kept as a string otherwise.
void apply_override(json& cfg, const std::string& key, const std::string& value);

// Run one subcommand. 0 on success, 2 on a configuration error, 1 on any
// other failure.
int dispatch(const std::vector<std::string>& args);

}  // namespace rtc
