#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cropseg/errors.hpp"
#include "cropseg/model.hpp"

// JSON + binary file plumbing shared by the checkpoint and dataset formats.
// All binary payloads are little-endian; manifests are deterministic
// (insertion-ordered keys, fixed indentation).

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are unsupported");

namespace cropseg {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

inline ojson model_config_to_json(const ModelConfig& c) {
  ojson j;
  j["in_channels"] = c.in_channels;
  j["time_steps"] = c.time_steps;
  j["depth"] = c.depth;
  j["base_channels"] = c.base_channels;
  j["dropout_rate"] = c.dropout_rate;
  j["temporal_pool_window"] = c.temporal_pool_window;
  j["hidden_activation"] = c.hidden_activation;
  j["output_activation"] = c.output_activation;
  j["patch_size"] = c.patch_size;
  return j;
}

inline ModelConfig model_config_from_json(const ojson& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  try {
    c.in_channels = j.value("in_channels", c.in_channels);
    c.time_steps = j.value("time_steps", c.time_steps);
    c.depth = j.value("depth", c.depth);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.temporal_pool_window = j.value("temporal_pool_window", c.temporal_pool_window);
    c.hidden_activation = j.value("hidden_activation", c.hidden_activation);
    c.output_activation = j.value("output_activation", c.output_activation);
    c.patch_size = j.value("patch_size", c.patch_size);
  } catch (const ojson::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

// --- file helpers; callers decide the error taxonomy on read failure ---

inline bool read_file_bytes(const fs::path& path, std::vector<std::uint8_t>& out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return false;
  f.seekg(0, std::ios::end);
  const auto n = f.tellg();
  if (n < 0) return false;
  out.resize(static_cast<size_t>(n));
  f.seekg(0);
  if (n > 0) f.read(reinterpret_cast<char*>(out.data()), n);
  return static_cast<bool>(f);
}

inline bool read_file_text(const fs::path& path, std::string& out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return false;
  out.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  return true;
}

inline void write_file_bytes(const fs::path& path, const void* data, size_t n) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  if (n > 0) f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!f) throw DataError("short write: " + path.string());
}

inline void write_json_file(const fs::path& path, const ojson& j) {
  const std::string text = j.dump(2) + "\n";
  write_file_bytes(path, text.data(), text.size());
}

}  // namespace cropseg
