#include "relic/manifest.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "relic/io_util.hpp"

namespace relic {

void RunManifest::write(const std::string& path) const {
  nlohmann::json j;
  j["command"] = command;
  j["seed"] = seed;
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [k, v] : config) cfg[k] = v;
  j["config"] = cfg;
  nlohmann::json ins = nlohmann::json::object();
  for (const auto& p : inputs)
    ins[p] = std::filesystem::exists(p) ? file_hash(p) : "missing";
  j["inputs"] = ins;
  j["outputs"] = outputs;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << j.dump(2) << "\n";
}

}  // namespace relic
