#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <vector>

#include "cropseg/checkpoint.hpp"
#include "cropseg/model.hpp"

// Fine-tuning regimes over a pretrained checkpoint, and first-layer kernel
// surgery for adding input features to an already-trained model.

namespace cropseg {

enum class FinetuneKind { RI, FT, FT_E, FT_D, FT_D_LAST };

struct FinetuneMode {
  FinetuneKind kind = FinetuneKind::FT;
  Index k = 1;  // FT_D_LAST only: trailing decoder blocks to unfreeze (head counts)

  static FinetuneMode parse(const std::string& name) {
    std::string s;
    for (char ch : name)
      s.push_back(ch == '-' ? '_'
                            : static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    if (s == "ri") return {FinetuneKind::RI};
    if (s == "ft") return {FinetuneKind::FT};
    if (s == "ft_e") return {FinetuneKind::FT_E};
    if (s == "ft_d") return {FinetuneKind::FT_D};
    if (s.starts_with("ft_d_last")) {
      FinetuneMode m{FinetuneKind::FT_D_LAST};
      const std::string rest = s.substr(9);
      if (!rest.empty()) {
        try {
          m.k = std::stol(rest);
        } catch (const std::exception&) {
          throw ConfigError("bad fine-tune mode: " + name);
        }
      }
      return m;
    }
    throw ConfigError("unknown fine-tune mode: " + name +
                      " (expected ri|ft|ft_e|ft_d|ft_d_last<k>)");
  }

  std::string name() const {
    switch (kind) {
      case FinetuneKind::RI: return "ri";
      case FinetuneKind::FT: return "ft";
      case FinetuneKind::FT_E: return "ft_e";
      case FinetuneKind::FT_D: return "ft_d";
      case FinetuneKind::FT_D_LAST: return "ft_d_last" + std::to_string(k);
    }
    return "?";
  }
};

// parameter-path -> updated-by-optimizer; keys exactly the ParameterSet paths.
using TrainableMask = std::map<std::string, bool>;

// Eq. 2: choose which half of h = h_E ∘ h_D the optimizer may touch, and
// whether pretrained values survive at all (RI discards them).
inline std::pair<ParameterSet<float>, TrainableMask> apply_finetune_mode(
    const CheckpointBundle& checkpoint, FinetuneMode mode, std::uint64_t seed) {
  const ModelConfig& config = checkpoint.config();
  const Index blocks = config.decoder_block_count();
  if (mode.kind == FinetuneKind::FT_D_LAST && (mode.k < 1 || mode.k > blocks))
    throw ConfigError("ft_d_last k=" + std::to_string(mode.k) + " out of range [1, " +
                      std::to_string(blocks) + "]");

  ParameterSet<float> params =
      mode.kind == FinetuneKind::RI ? build_model<float>(config, seed) : checkpoint.params;

  TrainableMask mask;
  for (const auto& spec : params.specs) {
    bool trainable = true;
    switch (mode.kind) {
      case FinetuneKind::RI:
      case FinetuneKind::FT: trainable = true; break;
      case FinetuneKind::FT_E: trainable = spec.group == ParamGroup::encoder; break;
      case FinetuneKind::FT_D: trainable = spec.group == ParamGroup::decoder; break;
      case FinetuneKind::FT_D_LAST:
        trainable = spec.group == ParamGroup::decoder && spec.block >= blocks - mode.k;
        break;
    }
    mask[spec.path] = trainable;
  }
  return {std::move(params), std::move(mask)};
}

// Eq. 3: widen the first encoder conv from C_old to N input channels. Each
// new channel j copies the kernel slice of its source channel scaled by
// C_old/N; the source is the feature-name match when the new feature already
// existed, and channel (j mod C_old) for genuinely new features ("tile").
// Bias and every other parameter are bitwise unchanged, so when the new
// channels duplicate the old signal the first-layer pre-activation — and
// hence the whole forward pass — is preserved.
inline CheckpointBundle expand_input_channels(const CheckpointBundle& checkpoint,
                                              const std::vector<std::string>& new_features) {
  const ModelConfig& old_config = checkpoint.config();
  const Index c_old = old_config.in_channels;
  const Index n = static_cast<Index>(new_features.size());
  const auto& old_names = checkpoint.feature_names;
  if (n < c_old)
    throw ConfigError("expansion needs at least " + std::to_string(c_old) + " features, got " +
                      std::to_string(n));
  for (const auto& name : old_names)
    if (std::find(new_features.begin(), new_features.end(), name) == new_features.end())
      throw ConfigError("new feature list drops existing feature: " + name);

  ModelConfig config = old_config;
  config.in_channels = n;
  auto params = ParameterSet<float>::shaped(config);
  for (size_t i = 0; i < params.specs.size(); ++i) {
    const auto& spec = params.specs[i];
    if (spec.path == "encoder.0.conv1.weight") continue;
    params.values[i] = checkpoint.params.value(spec.path);  // shapes agree away from layer 0
  }

  const auto& w_old = checkpoint.params.value("encoder.0.conv1.weight");  // [out, C_old, 3, 3]
  auto& w_new = params.value("encoder.0.conv1.weight");                   // [out, N, 3, 3]
  const Index out = w_old.dim(0), kk = w_old.dim(2) * w_old.dim(3);
  const float scale = static_cast<float>(static_cast<double>(c_old) / static_cast<double>(n));
  for (Index j = 0; j < n; ++j) {
    Index src = j % c_old;
    auto hit = std::find(old_names.begin(), old_names.end(), new_features[static_cast<size_t>(j)]);
    if (hit != old_names.end()) src = static_cast<Index>(hit - old_names.begin());
    for (Index o = 0; o < out; ++o) {
      const float* from = w_old.data() + (o * c_old + src) * kk;
      float* to = w_new.data() + (o * n + j) * kk;
      for (Index q = 0; q < kk; ++q) to[q] = from[q] * scale;
    }
  }

  ojson provenance = checkpoint.provenance;
  provenance["expanded_from"] = old_names;
  return CheckpointBundle{std::move(params), new_features, std::move(provenance)};
}

}  // namespace cropseg
