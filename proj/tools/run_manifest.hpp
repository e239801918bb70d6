#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace aid::cli {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_bytes(std::string_view bytes);
/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Provenance record written next to every command's outputs.
class RunManifest {
 public:
  explicit RunManifest(std::string command);

  void set_config(nlohmann::json config) { config_ = std::move(config); }
  void add_seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }
  /// Hashes now; inputs are recorded before the command runs.
  void add_input(const std::filesystem::path& path);
  /// Hashed in `write`, after the outputs exist.
  void add_output(const std::filesystem::path& path) { outputs_.push_back(path); }
  /// Volume prefix: both the header and the payload.
  void add_volume_input(const std::filesystem::path& prefix);
  void add_volume_output(const std::filesystem::path& prefix);

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::string command_;
  nlohmann::json config_ = nlohmann::json::object();
  nlohmann::json seeds_ = nlohmann::json::object();
  nlohmann::json inputs_ = nlohmann::json::array();
  std::vector<std::filesystem::path> outputs_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace aid::cli
