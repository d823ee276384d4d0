#include "cmwnet/run_manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iterator>

#include "cmwnet/errors.hpp"

namespace cmwnet {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::start() { started_at = utc_timestamp(); }
void RunManifest::finish() { finished_at = utc_timestamp(); }

std::string RunManifest::artifact_hash() const {
  std::string bytes;
  for (const auto& p : artifacts) {
    bytes += p.filename().string();
    bytes.push_back('\0');
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read artifact " + p.string());
    bytes.append(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return hex64(fnv1a64(bytes));
}

json RunManifest::to_json() const {
  json files = json::array();
  for (const auto& p : artifacts) files.push_back(p.string());
  return json{{"command", command},
              {"argv", argv},
              {"configs", configs},
              {"seed", seed},
              {"artifacts", files},
              {"artifact_hash", artifact_hash()},
              {"started_at", started_at},
              {"finished_at", finished_at}};
}

void RunManifest::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

}  // namespace cmwnet
