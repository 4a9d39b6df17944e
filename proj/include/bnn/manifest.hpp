#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace bnn {

inline constexpr const char* kToolVersion = "bnn 0.1.0";

// Resolved run configuration as ordered key=value pairs. The map is the
// single source of truth for reproduction: feeding a manifest back through
// --config reruns the command bit-exactly (timestamps aside).
using KvConfig = std::map<std::string, std::string>;

KvConfig parse_kv_text(const std::string& text);
std::string kv_to_text(const KvConfig& kv);

struct Manifest {
  std::string command;
  KvConfig config;
  std::string out_dir;
  std::string tool_version = kToolVersion;
  std::string created_at;
};

void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

// Accepts either a key=value file or a previously written manifest.json.
KvConfig load_config_file(const std::filesystem::path& path);

// UTC, second resolution.
std::string timestamp_now();

}  // namespace bnn
