#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace hscm::cli {

std::string sha256_hex(std::string_view bytes);

/// Record of one command run. Everything except the wall-clock duration is a
/// function of the command line and the input bytes.
class RunManifest {
 public:
  RunManifest(std::string command, std::uint64_t seed);

  void set_config(const nlohmann::json& config) { config_ = config; }
  void add_input(const std::filesystem::path& path, std::string_view bytes);
  void add_output(const std::filesystem::path& path, std::string_view bytes);
  nlohmann::json to_json() const;

 private:
  std::string command_;
  std::uint64_t seed_;
  nlohmann::json config_ = nlohmann::json::object();
  nlohmann::json inputs_ = nlohmann::json::array();
  nlohmann::json outputs_ = nlohmann::json::array();
  std::chrono::steady_clock::time_point start_;
};

}  // namespace hscm::cli
