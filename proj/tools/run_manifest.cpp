#include "run_manifest.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <memory>

#include <Eigen/Core>
#include <openssl/crypto.h>
#include <openssl/evp.h>

#include "aiddti/core_types.hpp"
#include "aiddti/volume_io.hpp"

namespace aid::cli {

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string hex(const unsigned char* digest, unsigned len) {
  std::string out;
  char byte[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", digest[i]);
    out += byte;
  }
  return out;
}

}  // namespace

std::string sha256_bytes(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::io, "SHA-256 digest failed");
  return hex(digest.data(), len);
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string() + " for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::io, "SHA-256 initialisation failed");
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  return hex(digest.data(), len);
}

RunManifest::RunManifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

void RunManifest::add_input(const std::filesystem::path& path) {
  inputs_.push_back({{"path", path.string()}, {"sha256", sha256_file(path)}});
}

void RunManifest::add_volume_input(const std::filesystem::path& prefix) {
  const auto p = volume_paths(prefix);
  add_input(p.header);
  add_input(p.payload);
}

void RunManifest::add_volume_output(const std::filesystem::path& prefix) {
  const auto p = volume_paths(prefix);
  add_output(p.header);
  add_output(p.payload);
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json outputs = nlohmann::json::array();
  for (const auto& p : outputs_) outputs.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start_;
  return {{"format", "aiddti-manifest"},
          {"version", 1},
          {"command", command_},
          {"config", config_},
          {"config_sha256", sha256_bytes(config_.dump())},
          {"versions",
           {{"aiddti", kToolVersion},
            {"compiler", __VERSION__},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"openssl", OpenSSL_version(OPENSSL_VERSION)}}},
          {"seeds", seeds_},
          {"inputs", inputs_},
          {"outputs", outputs},
          {"duration_seconds", elapsed.count()}};
}

void RunManifest::write(const std::filesystem::path& path) const { atomic_write(path, to_json().dump(2) + "\n"); }

}  // namespace aid::cli
