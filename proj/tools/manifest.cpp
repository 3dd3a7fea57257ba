#include "manifest.hpp"

#include <array>
#include <memory>
#include <stdexcept>

#include <openssl/evp.h>

namespace hscm::cli {

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

RunManifest::RunManifest(std::string command, std::uint64_t seed)
    : command_(std::move(command)), seed_(seed), start_(std::chrono::steady_clock::now()) {}

void RunManifest::add_input(const std::filesystem::path& path, std::string_view bytes) {
  inputs_.push_back({{"path", path.generic_string()},
                     {"bytes", bytes.size()},
                     {"sha256", sha256_hex(bytes)}});
}

void RunManifest::add_output(const std::filesystem::path& path, std::string_view bytes) {
  outputs_.push_back({{"path", path.generic_string()},
                      {"bytes", bytes.size()},
                      {"sha256", sha256_hex(bytes)}});
}

nlohmann::json RunManifest::to_json() const {
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  return {{"command", command_},
          {"tool_version", HSCM_VERSION},
          {"seed", seed_},
          {"config_hash", sha256_hex(config_.dump())},
          {"config", config_},
          {"inputs", inputs_},
          {"outputs", outputs_},
          {"wall_clock_seconds", seconds}};
}

}  // namespace hscm::cli
