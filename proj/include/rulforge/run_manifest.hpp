#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rulforge/errors.hpp"
#include "rulforge/version.hpp"

namespace rulforge::config {

// One manifest per command run, written alongside the outputs; records what
// produced them and from which inputs.
struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> input_paths;
  std::vector<std::string> output_paths;
  std::string tool_version = kVersion;
  double duration_seconds = 0.0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"command", command},
                          {"config", config},
                          {"seeds", seeds},
                          {"input_paths", input_paths},
                          {"output_paths", output_paths},
                          {"tool_version", tool_version},
                          {"duration_seconds", duration_seconds}};
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path.string());
    out << to_json().dump(2) << "\n";
  }
};

}  // namespace rulforge::config
