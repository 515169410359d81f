#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cropseg/model.hpp"
#include "cropseg/serialize.hpp"

// SAR time-series patch data: 20-day compositing, min-max normalization,
// patch-level splits, a deterministic synthetic-field generator, and the
// on-disk dataset format.
//
// Dataset directory format:
//   manifest.json      — T/C/H/W, feature_names, region, year, crop,
//                        split_tag, norm_stats (nullable), per-patch index
//   patch_<id>.bin     — little-endian f32, row-major [T, C, H, W] (raw values)
//   label_<id>.bin     — u8 [H, W], values {0,1}

namespace cropseg {

struct PatchSample {
  std::string id;
  Tensor<float> x;         // [T, C, H, W], raw (unnormalized)
  Tensor<std::uint8_t> y;  // [H, W]
};

struct NormStats {
  std::vector<float> min, max;  // per feature

  void validate(Index channels) const {
    if (static_cast<Index>(min.size()) != channels ||
        static_cast<Index>(max.size()) != channels)
      throw DataError("norm_stats size does not match channel count");
    for (size_t i = 0; i < min.size(); ++i) {
      if (!std::isfinite(min[i]) || !std::isfinite(max[i]) || min[i] > max[i])
        throw DataError("norm_stats must be finite with min <= max");
    }
  }
};

enum class SplitTag { unsplit, train, test };

inline std::string to_string(SplitTag t) {
  switch (t) {
    case SplitTag::train: return "train";
    case SplitTag::test: return "test";
    default: return "unsplit";
  }
}

inline SplitTag split_tag_from_string(const std::string& s) {
  if (s == "train") return SplitTag::train;
  if (s == "test") return SplitTag::test;
  if (s == "unsplit") return SplitTag::unsplit;
  throw DataError("unknown split_tag: " + s);
}

struct PatchDataset {
  std::vector<PatchSample> samples;
  std::vector<std::string> feature_names;
  Index time_steps = 0, channels = 0, height = 0, width = 0;
  std::string region = "synthetic";
  int year = 0;
  std::string crop = "rice";
  std::optional<NormStats> norm_stats;
  SplitTag split_tag = SplitTag::unsplit;

  void validate() const {
    if (static_cast<Index>(feature_names.size()) != channels)
      throw DataError("feature_names size does not match channels");
    for (const auto& s : samples) {
      if (s.x.rank() != 4 || s.x.dim(0) != time_steps || s.x.dim(1) != channels ||
          s.x.dim(2) != height || s.x.dim(3) != width)
        throw DataError("patch " + s.id + " has inconsistent x shape");
      if (s.y.rank() != 2 || s.y.dim(0) != height || s.y.dim(1) != width)
        throw DataError("patch " + s.id + " has inconsistent label shape");
    }
    if (norm_stats) norm_stats->validate(channels);
  }

  // Copy everything except the samples.
  PatchDataset header_clone() const {
    PatchDataset out;
    out.feature_names = feature_names;
    out.time_steps = time_steps;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.region = region;
    out.year = year;
    out.crop = crop;
    out.norm_stats = norm_stats;
    out.split_tag = split_tag;
    return out;
  }
};

// ---------------------------------------------------------------------------
// 20-day compositing

struct Scene {
  int day = 0;             // acquisition day-of-year
  Tensor<float> raster;    // [C, H, W]
};

struct CompositeResult {
  Tensor<float> x;            // [T, C, H, W]
  std::vector<bool> filled;   // window had no scenes and was neighbor-filled
};

// Window k (0-based) spans [start + 20k, start + 20(k+1)); each window is the
// pixelwise mean of its scenes. Empty windows get the mean of the nearest
// non-empty windows on each side (one side at the edges) and are flagged.
inline CompositeResult composite_20day(const std::vector<Scene>& scenes, int season_start_day,
                                       Index t) {
  if (scenes.empty()) throw ConfigError("composite_20day: no scenes");
  if (t < 1) throw ConfigError("composite_20day: T must be >= 1");
  const auto& first = scenes.front().raster;
  if (first.rank() != 3) throw ConfigError("composite_20day: scenes must be [C,H,W]");
  const Index c = first.dim(0), h = first.dim(1), w = first.dim(2);
  const Index n = c * h * w;

  Tensor<float> acc({t, c, h, w});
  std::vector<Index> counts(static_cast<size_t>(t), 0);
  for (const auto& s : scenes) {
    if (s.raster.rank() != 3 || s.raster.dim(0) != c || s.raster.dim(1) != h ||
        s.raster.dim(2) != w)
      throw ConfigError("composite_20day: scene raster shapes differ");
    const int rel = s.day - season_start_day;
    if (rel < 0 || rel >= 20 * t)
      throw ConfigError("composite_20day: scene day " + std::to_string(s.day) +
                        " outside season window");
    const Index k = rel / 20;
    MapRM<float>(acc.data() + k * n, 1, n) += ConstMapRM<float>(s.raster.data(), 1, n);
    ++counts[static_cast<size_t>(k)];
  }
  for (Index k = 0; k < t; ++k)
    if (counts[static_cast<size_t>(k)] > 0)
      MapRM<float>(acc.data() + k * n, 1, n) /= static_cast<float>(counts[static_cast<size_t>(k)]);

  CompositeResult out{std::move(acc), std::vector<bool>(static_cast<size_t>(t), false)};
  for (Index k = 0; k < t; ++k) {
    if (counts[static_cast<size_t>(k)] > 0) continue;
    Index prev = k - 1, next = k + 1;
    while (prev >= 0 && counts[static_cast<size_t>(prev)] == 0) --prev;
    while (next < t && counts[static_cast<size_t>(next)] == 0) ++next;
    MapRM<float> dst(out.x.data() + k * n, 1, n);
    if (prev >= 0 && next < t) {
      dst = (ConstMapRM<float>(out.x.data() + prev * n, 1, n) +
             ConstMapRM<float>(out.x.data() + next * n, 1, n)) *
            0.5f;
    } else if (prev >= 0) {
      dst = ConstMapRM<float>(out.x.data() + prev * n, 1, n);
    } else if (next < t) {
      dst = ConstMapRM<float>(out.x.data() + next * n, 1, n);
    }
    out.filled[static_cast<size_t>(k)] = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

inline NormStats fit_normalization(const std::vector<PatchSample>& train_samples) {
  if (train_samples.empty()) throw ConfigError("fit_normalization: no samples");
  const Index t = train_samples.front().x.dim(0), c = train_samples.front().x.dim(1);
  NormStats stats;
  stats.min.assign(static_cast<size_t>(c), std::numeric_limits<float>::infinity());
  stats.max.assign(static_cast<size_t>(c), -std::numeric_limits<float>::infinity());
  for (const auto& s : train_samples) {
    const Index hw = s.x.dim(2) * s.x.dim(3);
    for (Index ti = 0; ti < t; ++ti) {
      for (Index ci = 0; ci < c; ++ci) {
        ConstMapRM<float> plane(s.x.data() + (ti * c + ci) * hw, 1, hw);
        stats.min[static_cast<size_t>(ci)] =
            std::min(stats.min[static_cast<size_t>(ci)], plane.minCoeff());
        stats.max[static_cast<size_t>(ci)] =
            std::max(stats.max[static_cast<size_t>(ci)], plane.maxCoeff());
      }
    }
  }
  stats.validate(c);
  return stats;
}

// x' = (x - min) / (max - min) per feature, clipped to [0,1]; a degenerate
// feature (min == max) maps to 0 everywhere.
inline Tensor<float> normalize(const Tensor<float>& x, const NormStats& stats) {
  if (x.rank() != 4) throw ConfigError("normalize expects [T,C,H,W]");
  const Index t = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  stats.validate(c);
  Tensor<float> out(x.shape());
  for (Index ti = 0; ti < t; ++ti) {
    for (Index ci = 0; ci < c; ++ci) {
      const float lo = stats.min[static_cast<size_t>(ci)];
      const float hi = stats.max[static_cast<size_t>(ci)];
      const float* src = x.data() + (ti * c + ci) * hw;
      float* dst = out.data() + (ti * c + ci) * hw;
      if (hi <= lo) {
        std::fill(dst, dst + hw, 0.0f);
        continue;
      }
      const float inv = 1.0f / (hi - lo);
      for (Index i = 0; i < hw; ++i)
        dst[i] = std::clamp((src[i] - lo) * inv, 0.0f, 1.0f);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

inline std::pair<PatchDataset, PatchDataset> split_train_test(const PatchDataset& dataset,
                                                              double ratio, std::uint64_t seed) {
  if (dataset.samples.empty()) throw ConfigError("split_train_test: empty dataset");
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("split ratio must be in [0,1]");
  const size_t n = dataset.samples.size();
  const size_t n_train = static_cast<size_t>(std::llround(ratio * static_cast<double>(n)));

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed ^ 0x5b1ce5e1d5ULL);
  rng.shuffle(order);
  std::vector<bool> in_train(n, false);
  for (size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

  PatchDataset train = dataset.header_clone(), test = dataset.header_clone();
  train.split_tag = SplitTag::train;
  test.split_tag = SplitTag::test;
  for (size_t i = 0; i < n; ++i)
    (in_train[i] ? train : test).samples.push_back(dataset.samples[i]);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Synthetic data

struct ClassCurve {
  std::string name;
  std::vector<std::vector<float>> curves;  // [feature][t], values in [0,1]
  bool target = false;
};

struct SynthSpec {
  Index n_patches = 10;
  Index patch_size = 64;
  Index time_steps = 8;
  std::vector<std::string> features{"VH"};
  Index min_fields = 3, max_fields = 6;
  Index min_field_size = 8, max_field_size = 28;
  std::vector<ClassCurve> classes;  // field classes; background is implicit
  std::vector<std::vector<float>> background;  // [feature][t]
  double noise_sigma = 0.05;
  double min_positive_fraction = 0.10, max_positive_fraction = 0.50;
  bool confuser_class = false;
  std::string region = "synthetic";
  int year = 2020;
  std::string crop = "rice";

  void validate() const {
    if (n_patches < 1 || patch_size < 4 || time_steps < 1)
      throw ConfigError("synth spec: bad sizes");
    if (features.empty()) throw ConfigError("synth spec: needs at least one feature");
    if (noise_sigma < 0.0) throw ConfigError("synth spec: noise_sigma must be >= 0");
    if (min_fields < 1 || max_fields < min_fields) throw ConfigError("synth spec: bad field count");
    if (min_field_size < 1 || max_field_size < min_field_size ||
        max_field_size > patch_size)
      throw ConfigError("synth spec: field size exceeds patch");
    if (!(min_positive_fraction >= 0.0 && max_positive_fraction <= 1.0 &&
          min_positive_fraction <= max_positive_fraction))
      throw ConfigError("synth spec: bad positive fraction range");
    auto check_curves = [&](const std::vector<std::vector<float>>& cs, const std::string& who) {
      if (static_cast<Index>(cs.size()) != static_cast<Index>(features.size()))
        throw ConfigError("synth spec: " + who + " needs one curve per feature");
      for (const auto& curve : cs) {
        if (static_cast<Index>(curve.size()) != time_steps)
          throw ConfigError("synth spec: " + who + " curve length != T");
        for (float v : curve)
          if (!(v >= 0.0f && v <= 1.0f))
            throw ConfigError("synth spec: " + who + " curve values must lie in [0,1]");
      }
    };
    check_curves(background, "background");
    bool any_target = false;
    for (const auto& cl : classes) {
      check_curves(cl.curves, cl.name);
      any_target = any_target || cl.target;
    }
    if (classes.empty() || !any_target)
      throw ConfigError("synth spec: needs at least one target class");
  }

  // Rice-like preset: flood dip at t=1-2, growth peak at t=5-6 (1-based), a
  // distinct non-target crop, and a flat-ish background.
  static SynthSpec rice_like(Index n_patches, Index patch_size, Index t,
                             std::vector<std::string> features_in, double sigma) {
    SynthSpec s;
    s.n_patches = n_patches;
    s.patch_size = patch_size;
    s.time_steps = t;
    s.features = std::move(features_in);
    s.noise_sigma = sigma;
    auto stretch = [t](std::vector<float> base) {
      std::vector<float> out(static_cast<size_t>(t));
      const size_t m = base.size();
      for (Index i = 0; i < t; ++i) {
        const double pos = t == 1 ? 0.0
                                  : static_cast<double>(i) * static_cast<double>(m - 1) /
                                        static_cast<double>(t - 1);
        const size_t lo = static_cast<size_t>(pos);
        const double frac = pos - static_cast<double>(lo);
        const size_t hi = std::min(lo + 1, m - 1);
        out[static_cast<size_t>(i)] =
            static_cast<float>((1.0 - frac) * base[lo] + frac * base[hi]);
      }
      return out;
    };
    const std::vector<float> rice_vh{0.18f, 0.10f, 0.30f, 0.55f, 0.78f, 0.80f, 0.65f, 0.50f};
    const std::vector<float> rice_vv{0.30f, 0.18f, 0.35f, 0.55f, 0.70f, 0.72f, 0.60f, 0.50f};
    const std::vector<float> maize_vh{0.48f, 0.50f, 0.58f, 0.66f, 0.70f, 0.62f, 0.52f, 0.44f};
    const std::vector<float> maize_vv{0.52f, 0.55f, 0.60f, 0.66f, 0.64f, 0.56f, 0.48f, 0.42f};
    const std::vector<float> bg_vh{0.40f, 0.41f, 0.42f, 0.43f, 0.43f, 0.42f, 0.41f, 0.40f};
    const std::vector<float> bg_vv{0.45f, 0.46f, 0.46f, 0.47f, 0.47f, 0.46f, 0.45f, 0.45f};

    ClassCurve rice{"rice", {}, true};
    ClassCurve maize{"maize", {}, false};
    for (size_t f = 0; f < s.features.size(); ++f) {
      const bool vv = s.features[f] == "VV";
      rice.curves.push_back(stretch(vv ? rice_vv : rice_vh));
      maize.curves.push_back(stretch(vv ? maize_vv : maize_vh));
      s.background.push_back(stretch(vv ? bg_vv : bg_vh));
    }
    s.classes = {std::move(rice), std::move(maize)};
    return s;
  }
};

// Deterministic synthetic patches: background everywhere, rectangular fields
// painted per class curve, Gaussian noise, labels marking target classes.
// Geometry is resampled until the positive-pixel fraction lands in range.
inline PatchDataset generate_synthetic_dataset(SynthSpec spec, std::uint64_t seed) {
  if (spec.confuser_class) {
    // A crop whose first-feature curve matches the target exactly; the
    // remaining features (when present) carry the separating signal.
    const ClassCurve* target = nullptr;
    for (const auto& cl : spec.classes)
      if (cl.target) target = &cl;
    if (!target) throw ConfigError("synth spec: confuser requires a target class");
    ClassCurve confuser{"confuser", target->curves, false};
    for (size_t f = 1; f < confuser.curves.size(); ++f)
      for (auto& v : confuser.curves[f]) v = std::clamp(1.0f - v, 0.0f, 1.0f);
    if (confuser.curves.size() == 1)
      for (auto& v : confuser.curves[0]) v = std::clamp(v + 0.02f, 0.0f, 1.0f);
    spec.classes.push_back(std::move(confuser));
  }
  spec.validate();

  PatchDataset ds;
  ds.feature_names = spec.features;
  ds.time_steps = spec.time_steps;
  ds.channels = static_cast<Index>(spec.features.size());
  ds.height = ds.width = spec.patch_size;
  ds.region = spec.region;
  ds.year = spec.year;
  ds.crop = spec.crop;

  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x853c49e6748fea9bULL);
  const Index t = spec.time_steps, c = ds.channels, hw = spec.patch_size;

  for (Index pi = 0; pi < spec.n_patches; ++pi) {
    Tensor<std::uint8_t> label({hw, hw});
    // class index per pixel; -1 = background
    std::vector<int> owner;
    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
      owner.assign(static_cast<size_t>(hw * hw), -1);
      const Index nf = rng.range(spec.min_fields, spec.max_fields);
      for (Index fi = 0; fi < nf; ++fi) {
        const int ci = static_cast<int>(rng.below(spec.classes.size()));
        const Index fw = rng.range(spec.min_field_size, spec.max_field_size);
        const Index fh = rng.range(spec.min_field_size, spec.max_field_size);
        const Index x0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(hw - fw + 1)));
        const Index y0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(hw - fh + 1)));
        for (Index y = y0; y < y0 + fh; ++y)
          for (Index x = x0; x < x0 + fw; ++x) owner[static_cast<size_t>(y * hw + x)] = ci;
      }
      Index pos = 0;
      for (Index i = 0; i < hw * hw; ++i) {
        const int ci = owner[static_cast<size_t>(i)];
        const bool p = ci >= 0 && spec.classes[static_cast<size_t>(ci)].target;
        label.flat()[i] = p ? 1 : 0;
        pos += p ? 1 : 0;
      }
      const double frac = static_cast<double>(pos) / static_cast<double>(hw * hw);
      ok = frac >= spec.min_positive_fraction && frac <= spec.max_positive_fraction;
    }
    if (!ok)
      throw ConfigError("synthetic geometry infeasible: cannot hit positive fraction range");

    Tensor<float> x({t, c, hw, hw});
    for (Index ti = 0; ti < t; ++ti) {
      for (Index ci = 0; ci < c; ++ci) {
        float* plane = x.data() + (ti * c + ci) * hw * hw;
        const float bg = spec.background[static_cast<size_t>(ci)][static_cast<size_t>(ti)];
        for (Index i = 0; i < hw * hw; ++i) {
          const int cls = owner[static_cast<size_t>(i)];
          const float mean =
              cls < 0 ? bg
                      : spec.classes[static_cast<size_t>(cls)]
                            .curves[static_cast<size_t>(ci)][static_cast<size_t>(ti)];
          const float noisy =
              mean + static_cast<float>(spec.noise_sigma * rng.normal());
          plane[i] = std::clamp(noisy, 0.0f, 1.0f);
        }
      }
    }

    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "p%04d", static_cast<int>(pi));
    ds.samples.push_back(PatchSample{idbuf, std::move(x), std::move(label)});
  }
  ds.validate();
  return ds;
}

// Subset the channel axis by feature name (order given by `names`).
inline PatchDataset select_features(const PatchDataset& dataset,
                                    const std::vector<std::string>& names) {
  std::vector<Index> idx;
  for (const auto& n : names) {
    auto it = std::find(dataset.feature_names.begin(), dataset.feature_names.end(), n);
    if (it == dataset.feature_names.end()) throw ConfigError("unknown feature: " + n);
    idx.push_back(static_cast<Index>(it - dataset.feature_names.begin()));
  }
  if (idx.empty()) throw ConfigError("select_features: empty selection");

  PatchDataset out = dataset.header_clone();
  out.feature_names = names;
  out.channels = static_cast<Index>(idx.size());
  if (dataset.norm_stats) {
    NormStats stats;
    for (Index i : idx) {
      stats.min.push_back(dataset.norm_stats->min[static_cast<size_t>(i)]);
      stats.max.push_back(dataset.norm_stats->max[static_cast<size_t>(i)]);
    }
    out.norm_stats = std::move(stats);
  }
  const Index t = dataset.time_steps, hw = dataset.height * dataset.width;
  const Index c_old = dataset.channels, c_new = out.channels;
  for (const auto& s : dataset.samples) {
    Tensor<float> x({t, c_new, dataset.height, dataset.width});
    for (Index ti = 0; ti < t; ++ti)
      for (Index ci = 0; ci < c_new; ++ci)
        std::memcpy(x.data() + (ti * c_new + ci) * hw,
                    s.x.data() + (ti * c_old + idx[static_cast<size_t>(ci)]) * hw,
                    sizeof(float) * static_cast<size_t>(hw));
    out.samples.push_back(PatchSample{s.id, std::move(x), s.y});
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// On-disk format

inline void save_dataset(const PatchDataset& dataset, const fs::path& dir) {
  dataset.validate();
  fs::create_directories(dir);
  ojson patches = ojson::array();
  for (const auto& s : dataset.samples) {
    write_file_bytes(dir / ("patch_" + s.id + ".bin"), s.x.data(),
                     sizeof(float) * static_cast<size_t>(s.x.size()));
    write_file_bytes(dir / ("label_" + s.id + ".bin"), s.y.data(),
                     static_cast<size_t>(s.y.size()));
    patches.push_back(ojson{{"id", s.id}});
  }
  ojson manifest;
  manifest["format"] = "cropseg-dataset";
  manifest["version"] = 1;
  manifest["time_steps"] = dataset.time_steps;
  manifest["channels"] = dataset.channels;
  manifest["height"] = dataset.height;
  manifest["width"] = dataset.width;
  manifest["feature_names"] = dataset.feature_names;
  manifest["region"] = dataset.region;
  manifest["year"] = dataset.year;
  manifest["crop"] = dataset.crop;
  manifest["split_tag"] = to_string(dataset.split_tag);
  if (dataset.norm_stats) {
    manifest["norm_stats"] = ojson{{"min", dataset.norm_stats->min},
                                   {"max", dataset.norm_stats->max}};
  } else {
    manifest["norm_stats"] = nullptr;
  }
  manifest["patches"] = std::move(patches);
  write_json_file(dir / "manifest.json", manifest);
}

inline PatchDataset load_dataset(const fs::path& dir) {
  std::string text;
  if (!read_file_text(dir / "manifest.json", text))
    throw DataError("dataset manifest missing: " + (dir / "manifest.json").string());
  ojson manifest = ojson::parse(text, nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object())
    throw IntegrityError("manifest.json", "not valid JSON");
  if (manifest.value("format", "") != std::string("cropseg-dataset"))
    throw IntegrityError("manifest.json", "unrecognized format tag");

  PatchDataset ds;
  try {
    ds.time_steps = manifest.at("time_steps").get<Index>();
    ds.channels = manifest.at("channels").get<Index>();
    ds.height = manifest.at("height").get<Index>();
    ds.width = manifest.at("width").get<Index>();
    ds.feature_names = manifest.at("feature_names").get<std::vector<std::string>>();
    ds.region = manifest.value("region", std::string("unknown"));
    ds.year = manifest.value("year", 0);
    ds.crop = manifest.value("crop", std::string("unknown"));
    ds.split_tag = split_tag_from_string(manifest.value("split_tag", std::string("unsplit")));
    if (manifest.contains("norm_stats") && !manifest["norm_stats"].is_null()) {
      NormStats stats;
      stats.min = manifest["norm_stats"].at("min").get<std::vector<float>>();
      stats.max = manifest["norm_stats"].at("max").get<std::vector<float>>();
      ds.norm_stats = std::move(stats);
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw IntegrityError("manifest.json", e.what());
  }
  if (ds.time_steps < 1 || ds.channels < 1 || ds.height < 1 || ds.width < 1)
    throw IntegrityError("manifest.json", "bad tensor dimensions");
  if (ds.norm_stats) {
    try {
      ds.norm_stats->validate(ds.channels);
    } catch (const std::exception& e) {
      throw IntegrityError("norm_stats", e.what());
    }
  }

  const ojson& patches = manifest.value("patches", ojson::array());
  const size_t x_bytes =
      sizeof(float) * static_cast<size_t>(ds.time_steps * ds.channels * ds.height * ds.width);
  const size_t y_bytes = static_cast<size_t>(ds.height * ds.width);
  for (const auto& entry : patches) {
    const std::string id = entry.value("id", "");
    if (id.empty()) throw IntegrityError("manifest.json", "patch entry without id");
    std::vector<std::uint8_t> xb, yb;
    if (!read_file_bytes(dir / ("patch_" + id + ".bin"), xb))
      throw IntegrityError(id, "patch file missing");
    if (xb.size() != x_bytes)
      throw IntegrityError(id, "patch byte length " + std::to_string(xb.size()) +
                                   " != expected " + std::to_string(x_bytes));
    if (!read_file_bytes(dir / ("label_" + id + ".bin"), yb))
      throw IntegrityError(id, "label file missing");
    if (yb.size() != y_bytes)
      throw IntegrityError(id, "label byte length " + std::to_string(yb.size()) +
                                   " != expected " + std::to_string(y_bytes));
    PatchSample s;
    s.id = id;
    s.x = Tensor<float>({ds.time_steps, ds.channels, ds.height, ds.width});
    std::memcpy(s.x.data(), xb.data(), x_bytes);
    if (!s.x.flat().isFinite().all()) throw IntegrityError(id, "non-finite patch values");
    s.y = Tensor<std::uint8_t>({ds.height, ds.width});
    std::memcpy(s.y.data(), yb.data(), y_bytes);
    for (Index i = 0; i < s.y.size(); ++i)
      if (s.y.flat()[i] > 1) throw IntegrityError(id, "label values must be 0 or 1");
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

}  // namespace cropseg
