#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cmwnet/config.hpp"

namespace cmwnet {

/// Record of one CLI invocation, written as run_manifest.json next to its
/// outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  json configs = json::object();
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
  std::vector<std::filesystem::path> artifacts;

  void start();
  void finish();
  /// FNV-1a digest over artifact names and contents in order.
  std::string artifact_hash() const;
  json to_json() const;
  void write(const std::filesystem::path& path) const;
};

std::string utc_timestamp();

}  // namespace cmwnet
