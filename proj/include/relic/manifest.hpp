#pragma once

#include <string>
#include <vector>

namespace relic {

// Written before any long computation; enough to replay the run.
struct RunManifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> config;  // resolved key/values
  uint64_t seed = 0;
  std::vector<std::string> inputs;   // paths, hashed when present
  std::vector<std::string> outputs;  // declared output paths

  void write(const std::string& path) const;
};

}  // namespace relic
