#pragma once

#include <cstring>
#include <string>
#include <vector>

#include "cropseg/model.hpp"
#include "cropseg/serialize.hpp"

// Checkpoint directory format:
//   manifest.json  — model config, feature_names, provenance, ordered parameter
//                    index: path -> {shape, dtype:"f32", byte_offset, group}
//   params.bin     — little-endian IEEE-754 f32, row-major, canonical order
// Round-trips must be bit-exact; every load re-validates the index against the
// config-derived parameter shapes.

namespace cropseg {

struct CheckpointBundle {
  ParameterSet<float> params;  // params.config carries the ModelConfig
  std::vector<std::string> feature_names;
  ojson provenance = ojson::object();

  const ModelConfig& config() const { return params.config; }
};

inline CheckpointBundle make_bundle(ParameterSet<float> params,
                                    std::vector<std::string> feature_names,
                                    ojson provenance = ojson::object()) {
  if (static_cast<Index>(feature_names.size()) != params.config.in_channels)
    throw ConfigError("feature_names size must equal in_channels");
  return CheckpointBundle{std::move(params), std::move(feature_names), std::move(provenance)};
}

inline void save_checkpoint(const CheckpointBundle& bundle, const fs::path& dir) {
  if (static_cast<Index>(bundle.feature_names.size()) != bundle.config().in_channels)
    throw ConfigError("feature_names size must equal in_channels");
  fs::create_directories(dir);

  ojson index = ojson::array();
  std::vector<float> blob;
  blob.reserve(static_cast<size_t>(bundle.params.total_count()));
  std::uint64_t offset = 0;
  for (size_t i = 0; i < bundle.params.specs.size(); ++i) {
    const auto& spec = bundle.params.specs[i];
    const auto& val = bundle.params.values[i];
    ojson entry;
    entry["path"] = spec.path;
    entry["shape"] = spec.shape;
    entry["dtype"] = "f32";
    entry["byte_offset"] = offset;
    entry["group"] = spec.group == ParamGroup::encoder ? "encoder" : "decoder";
    index.push_back(std::move(entry));
    blob.insert(blob.end(), val.data(), val.data() + val.size());
    offset += static_cast<std::uint64_t>(val.size()) * sizeof(float);
  }

  ojson manifest;
  manifest["format"] = "cropseg-checkpoint";
  manifest["version"] = 1;
  manifest["config"] = model_config_to_json(bundle.config());
  manifest["feature_names"] = bundle.feature_names;
  manifest["provenance"] = bundle.provenance;
  manifest["params"] = std::move(index);

  write_file_bytes(dir / "params.bin", blob.data(), blob.size() * sizeof(float));
  write_json_file(dir / "manifest.json", manifest);
}

inline CheckpointBundle load_checkpoint(const fs::path& dir) {
  std::string text;
  if (!read_file_text(dir / "manifest.json", text))
    throw IntegrityError("manifest.json", "missing or unreadable in " + dir.string());
  ojson manifest = ojson::parse(text, nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object())
    throw IntegrityError("manifest.json", "not valid JSON");
  if (manifest.value("format", "") != std::string("cropseg-checkpoint"))
    throw IntegrityError("manifest.json", "unrecognized format tag");

  CheckpointBundle bundle;
  try {
    bundle.params = ParameterSet<float>::shaped(model_config_from_json(manifest.at("config")));
    bundle.feature_names = manifest.at("feature_names").get<std::vector<std::string>>();
    bundle.provenance = manifest.value("provenance", ojson::object());
  } catch (const std::exception& e) {
    throw IntegrityError("manifest.json", e.what());
  }
  if (static_cast<Index>(bundle.feature_names.size()) != bundle.config().in_channels)
    throw IntegrityError("manifest.json", "feature_names size does not match in_channels");

  const ojson* pindex = manifest.contains("params") ? &manifest["params"] : nullptr;
  if (!pindex || !pindex->is_array() || pindex->size() != bundle.params.specs.size())
    throw IntegrityError("manifest.json", "parameter index missing or wrong length");

  std::vector<std::uint8_t> blob;
  if (!read_file_bytes(dir / "params.bin", blob))
    throw IntegrityError("params.bin", "missing or unreadable in " + dir.string());

  std::uint64_t expect_offset = 0;
  for (size_t i = 0; i < bundle.params.specs.size(); ++i) {
    const auto& spec = bundle.params.specs[i];
    const ojson& entry = (*pindex)[i];
    const std::string path = entry.value("path", "");
    if (path != spec.path)
      throw IntegrityError(path.empty() ? spec.path : path, "unexpected parameter path");
    if (entry.value("dtype", "") != std::string("f32"))
      throw IntegrityError(spec.path, "unsupported dtype");
    const auto shape = entry.value("shape", std::vector<Index>{});
    if (shape != spec.shape) throw IntegrityError(spec.path, "shape mismatch vs model config");
    if (entry.value("byte_offset", std::uint64_t(-1)) != expect_offset)
      throw IntegrityError(spec.path, "byte_offset mismatch");
    auto& val = bundle.params.values[i];
    const std::uint64_t nbytes = static_cast<std::uint64_t>(val.size()) * sizeof(float);
    if (expect_offset + nbytes > blob.size())
      throw IntegrityError(spec.path, "params.bin truncated");
    std::memcpy(val.data(), blob.data() + expect_offset, nbytes);
    expect_offset += nbytes;
  }
  if (expect_offset != blob.size())
    throw IntegrityError("params.bin", "trailing bytes beyond parameter index");
  bundle.params.rebuild_index();
  return bundle;
}

}  // namespace cropseg
