// Command-line front end: synth → split → pretrain → adapt-channels →
// finetune → predict/evaluate, plus checkpoint verification.
//
// Every command takes --out DIR and leaves a run_manifest.json there with the
// resolved configuration, the output file list, and wall-clock timings.
// Timings live only in the manifest so reports stay byte-identical across
// runs with the same seeds.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 integrity error,
// 5 divergence. Errors print a single line: "error: [<kind>] <message>".

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <cropseg/cropseg.hpp>

using namespace cropseg;

namespace {

constexpr const char* kVersion = "cropseg/0.1.0";

// ---------------------------------------------------------------------------
// Scenario presets: the 10 (fine-tune region, test region, crop, features)
// combinations, with published metrics kept as non-binding reference values.

struct ScenarioPreset {
  int id;
  const char* finetune_region;
  const char* test_region;
  const char* crop;
  const char* features;
  // method order: RF, RI, FT, FT_E
  double iou[4], recall[4], precision[4], f1[4];
};

constexpr ScenarioPreset kScenarios[] = {
    {1, "Spain", "Spain", "rice", "VH",
     {0.87, 0.86, 0.89, 0.90}, {0.957, 0.967, 0.957, 0.964},
     {0.910, 0.891, 0.932, 0.929}, {0.932, 0.927, 0.944, 0.947}},
    {2, "Spain", "Spain", "rice", "VH|VV",
     {0.90, 0.69, 0.90, 0.90}, {0.964, 0.765, 0.962, 0.962},
     {0.926, 0.875, 0.928, 0.935}, {0.945, 0.816, 0.945, 0.948}},
    {3, "Spain", "France", "rice", "VH",
     {0.63, 0.52, 0.57, 0.63}, {0.665, 0.584, 0.601, 0.674},
     {0.926, 0.826, 0.919, 0.903}, {0.774, 0.684, 0.726, 0.772}},
    {4, "Spain", "France", "rice", "VH|VV",
     {0.66, 0.36, 0.63, 0.66}, {0.698, 0.460, 0.674, 0.694},
     {0.931, 0.638, 0.915, 0.929}, {0.798, 0.534, 0.776, 0.794}},
    {5, "France", "France", "rice", "VH",
     {0.76, 0.76, 0.82, 0.86}, {0.831, 0.879, 0.896, 0.915},
     {0.901, 0.849, 0.905, 0.933}, {0.864, 0.864, 0.901, 0.924}},
    {6, "France", "France", "rice", "VH|VV",
     {0.84, 0.74, 0.83, 0.86}, {0.881, 0.841, 0.894, 0.911},
     {0.943, 0.856, 0.920, 0.939}, {0.911, 0.848, 0.907, 0.925}},
    {7, "France", "Spain", "rice", "VH",
     {0.77, 0.70, 0.82, 0.79}, {0.878, 0.809, 0.954, 0.914},
     {0.866, 0.838, 0.858, 0.854}, {0.872, 0.824, 0.903, 0.883}},
    {8, "France", "Spain", "rice", "VH|VV",
     {0.78, 0.73, 0.83, 0.84}, {0.846, 0.818, 0.950, 0.964},
     {0.906, 0.871, 0.872, 0.873}, {0.875, 0.844, 0.909, 0.916}},
    {9, "Netherlands", "Netherlands", "summer_barley", "VH",
     {0.26, 0.31, 0.40, 0.42}, {0.293, 0.400, 0.490, 0.518},
     {0.718, 0.590, 0.686, 0.683}, {0.416, 0.477, 0.571, 0.589}},
    {10, "Netherlands", "Netherlands", "summer_barley", "VH|VV",
     {0.40, 0.00, 0.45, 0.54}, {0.446, 0.004, 0.614, 0.705},
     {0.781, 0.477, 0.631, 0.696}, {0.567, 0.007, 0.622, 0.700}},
};

const ScenarioPreset* find_scenario(int id) {
  for (const auto& s : kScenarios)
    if (s.id == id) return &s;
  return nullptr;
}

ojson scenario_reference(const ScenarioPreset& s) {
  static constexpr const char* methods[] = {"RF", "RI", "FT", "FT_E"};
  ojson out;
  for (int m = 0; m < 4; ++m) {
    ojson e;
    e["iou"] = s.iou[m];
    e["recall"] = s.recall[m];
    e["precision"] = s.precision[m];
    e["f1"] = s.f1[m];
    out[methods[m]] = std::move(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config plumbing

ojson load_config(const fs::path& path) {
  std::string text;
  if (!read_file_text(path, text)) throw DataError("config file missing: " + path.string());
  ojson j = ojson::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw ConfigError("config is not a JSON object: " + path.string());
  return j;
}

template <typename T>
T get_or(const ojson& j, const std::string& key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

template <typename T>
T require(const ojson& j, const std::string& key) {
  if (!j.contains(key)) throw ConfigError("config key '" + key + "' is required");
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

ModelConfig model_from_json(const ojson& j, Index time_steps, Index in_channels) {
  ModelConfig mc = ModelConfig::desk_scale();
  mc.patch_size = get_or<Index>(j, "patch_size", mc.patch_size);
  mc.depth = get_or<Index>(j, "depth", mc.depth);
  mc.base_channels = get_or<Index>(j, "base_channels", mc.base_channels);
  mc.dropout_rate = get_or<double>(j, "dropout_rate", mc.dropout_rate);
  mc.temporal_pool_window = get_or<Index>(j, "temporal_pool_window", mc.temporal_pool_window);
  mc.time_steps = time_steps;
  mc.in_channels = in_channels;
  mc.validate();
  return mc;
}

TrainConfig train_from_json(const ojson& j, double default_lr) {
  TrainConfig tc;
  tc.epochs = get_or<Index>(j, "epochs", 1);
  tc.batch_size = get_or<Index>(j, "batch_size", 4);
  tc.learning_rate = get_or<double>(j, "learning_rate", default_lr);
  tc.pos_weight = get_or<double>(j, "pos_weight", 1.0);
  tc.curriculum = get_or<bool>(j, "curriculum", true);
  tc.early_step_set = get_or<std::vector<Index>>(j, "early_step_set", {});
  return tc;
}

ojson train_to_json(const TrainConfig& tc) {
  ojson j;
  j["epochs"] = tc.epochs;
  j["batch_size"] = tc.batch_size;
  j["learning_rate"] = tc.learning_rate;
  j["pos_weight"] = tc.pos_weight;
  j["seed"] = tc.seed;
  j["curriculum"] = tc.curriculum;
  j["early_step_set"] = tc.early_step_set;
  return j;
}

ojson model_to_json(const ModelConfig& mc) {
  ojson j;
  j["in_channels"] = mc.in_channels;
  j["time_steps"] = mc.time_steps;
  j["depth"] = mc.depth;
  j["base_channels"] = mc.base_channels;
  j["dropout_rate"] = mc.dropout_rate;
  j["temporal_pool_window"] = mc.temporal_pool_window;
  j["patch_size"] = mc.patch_size;
  return j;
}

ojson stats_to_json(const NormStats& s) {
  ojson j;
  j["min"] = s.min;
  j["max"] = s.max;
  return j;
}

// Stats a checkpoint was trained with; refuses silently inventing them.
NormStats stats_from_provenance(const CheckpointBundle& bundle) {
  if (!bundle.provenance.contains("norm_stats"))
    throw DataError("checkpoint provenance has no norm_stats; re-run pretrain/finetune");
  const ojson& js = bundle.provenance.at("norm_stats");
  NormStats stats;
  try {
    stats.min = js.at("min").get<std::vector<float>>();
    stats.max = js.at("max").get<std::vector<float>>();
  } catch (const std::exception& e) {
    throw IntegrityError("norm_stats", e.what());
  }
  stats.validate(bundle.config().in_channels);
  return stats;
}

// ---------------------------------------------------------------------------
// Run manifest

class RunManifest {
 public:
  RunManifest(std::string command, ojson resolved_config)
      : start_(std::chrono::steady_clock::now()) {
    j_["command"] = std::move(command);
    j_["version"] = kVersion;
    j_["config"] = std::move(resolved_config);
    j_["outputs"] = ojson::array();
    j_["timings_ms"] = ojson::object();
  }

  void add_output(const fs::path& p) { j_["outputs"].push_back(p.string()); }
  void note(const std::string& key, ojson value) { j_[key] = std::move(value); }

  void lap(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    j_["timings_ms"][stage] =
        std::chrono::duration_cast<std::chrono::milliseconds>(now - start_).count();
    start_ = now;
  }

  void write(const fs::path& dir) {
    fs::create_directories(dir);
    j_["timings_ms"]["total"] = 0;
    long total = 0;
    for (const auto& [k, v] : j_["timings_ms"].items())
      if (k != "total") total += v.get<long>();
    j_["timings_ms"]["total"] = total;
    write_json_file(dir / "run_manifest.json", j_);
  }

 private:
  ojson j_;
  std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// synth

SynthSpec synth_spec_from_json(const ojson& j) {
  const std::string preset = get_or<std::string>(j, "preset", "rice_like");
  if (preset != "rice_like")
    throw ConfigError("unknown synth preset: " + preset + " (available: rice_like)");

  SynthSpec spec = SynthSpec::rice_like(
      get_or<Index>(j, "n_patches", 10), get_or<Index>(j, "patch_size", 64),
      get_or<Index>(j, "time_steps", 8),
      get_or<std::vector<std::string>>(j, "features", {"VH"}),
      get_or<double>(j, "noise_sigma", 0.05));
  spec.min_fields = get_or<Index>(j, "min_fields", spec.min_fields);
  spec.max_fields = get_or<Index>(j, "max_fields", spec.max_fields);
  spec.min_field_size = get_or<Index>(j, "min_field_size", spec.min_field_size);
  spec.max_field_size = get_or<Index>(j, "max_field_size", spec.max_field_size);
  spec.min_positive_fraction =
      get_or<double>(j, "min_positive_fraction", spec.min_positive_fraction);
  spec.max_positive_fraction =
      get_or<double>(j, "max_positive_fraction", spec.max_positive_fraction);
  spec.confuser_class = get_or<bool>(j, "confuser_class", false);
  spec.region = get_or<std::string>(j, "region", "synthetic");
  spec.year = get_or<int>(j, "year", 2020);
  spec.crop = get_or<std::string>(j, "crop", "rice");

  auto shift_curves = [](std::vector<std::vector<float>>& curves, double delta) {
    for (auto& curve : curves)
      for (auto& v : curve)
        v = std::clamp(v + static_cast<float>(delta), 0.0f, 1.0f);
  };
  // Shifted phenology for a different region: every target curve moves.
  if (j.contains("target_shift") && !j.at("target_shift").is_null()) {
    const double delta = require<double>(j, "target_shift");
    for (auto& cl : spec.classes)
      if (cl.target) shift_curves(cl.curves, delta);
  }
  // A second target variant (two rice types in one region).
  if (j.contains("second_variant_shift") && !j.at("second_variant_shift").is_null()) {
    const double delta = require<double>(j, "second_variant_shift");
    ClassCurve variant;
    bool found = false;
    for (const auto& cl : spec.classes)
      if (cl.target && !found) {
        variant = cl;
        found = true;
      }
    if (!found) throw ConfigError("second_variant_shift requires a target class");
    variant.name += "_b";
    shift_curves(variant.curves, delta);
    spec.classes.push_back(std::move(variant));
  }
  return spec;
}

int cmd_synth(const fs::path& config_path, const fs::path& out, long seed_flag) {
  ojson cfg = load_config(config_path);
  const std::uint64_t seed =
      seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag) : get_or<std::uint64_t>(cfg, "seed", 0);
  cfg["seed"] = seed;

  RunManifest manifest("synth", cfg);
  const SynthSpec spec = synth_spec_from_json(cfg);
  PatchDataset ds = generate_synthetic_dataset(spec, seed);
  manifest.lap("generate");
  save_dataset(ds, out);
  manifest.add_output(out / "manifest.json");
  manifest.lap("save");
  manifest.note("n_patches", static_cast<long long>(ds.samples.size()));
  manifest.write(out);
  std::printf("synth: %zu patches (%lldx%lld, T=%lld, C=%lld) -> %s\n", ds.samples.size(),
              (long long)ds.height, (long long)ds.width, (long long)ds.time_steps,
              (long long)ds.channels, out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// split

int cmd_split(const fs::path& dataset_dir, double ratio, long seed, const fs::path& out) {
  ojson cfg;
  cfg["dataset"] = dataset_dir.string();
  cfg["ratio"] = ratio;
  cfg["seed"] = seed;
  RunManifest manifest("split", cfg);

  const PatchDataset ds = load_dataset(dataset_dir);
  manifest.lap("load");
  auto [train, test] = split_train_test(ds, ratio, static_cast<std::uint64_t>(seed));
  save_dataset(train, out / "train");
  save_dataset(test, out / "test");
  manifest.add_output(out / "train" / "manifest.json");
  manifest.add_output(out / "test" / "manifest.json");
  manifest.lap("split");
  manifest.write(out);
  std::printf("split: %zu train / %zu test -> %s\n", train.samples.size(), test.samples.size(),
              out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain

int cmd_pretrain(const fs::path& config_path, const fs::path& out, long seed_flag) {
  ojson cfg = load_config(config_path);
  const fs::path dataset_dir = require<std::string>(cfg, "dataset");
  const std::uint64_t seed =
      seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag) : get_or<std::uint64_t>(cfg, "seed", 0);
  cfg["seed"] = seed;

  const PatchDataset ds = load_dataset(dataset_dir);
  const ModelConfig mc = model_from_json(cfg.contains("model") ? cfg.at("model") : ojson::object(),
                                         ds.time_steps, ds.channels);
  TrainConfig tc =
      train_from_json(cfg.contains("train") ? cfg.at("train") : ojson::object(), 1e-3);
  tc.seed = seed;
  cfg["model"] = model_to_json(mc);
  cfg["train"] = train_to_json(tc);
  RunManifest manifest("pretrain", cfg);
  manifest.lap("load");

  const ParameterSet<float> init = build_model<float>(mc, seed);
  TrainableMask mask;
  for (const auto& s : init.specs) mask[s.path] = true;
  const NormStats stats = effective_stats(ds);

  PatchDataset with_stats = ds;
  with_stats.norm_stats = stats;
  const TrainResult result = train(init, mask, with_stats, tc);
  manifest.lap("train");

  ojson provenance;
  provenance["role"] = "pretrain";
  provenance["seed"] = seed;
  provenance["dataset"] = ojson{{"region", ds.region},
                                {"year", ds.year},
                                {"crop", ds.crop},
                                {"n_patches", ds.samples.size()}};
  provenance["norm_stats"] = stats_to_json(stats);
  provenance["train"] = train_to_json(tc);
  const CheckpointBundle bundle =
      make_bundle(result.params, ds.feature_names, std::move(provenance));
  save_checkpoint(bundle, out / "checkpoint");
  result.history.write_jsonl(out / "history.jsonl");
  manifest.add_output(out / "checkpoint" / "manifest.json");
  manifest.add_output(out / "history.jsonl");
  manifest.lap("save");
  manifest.note("final_fingerprint", result.history.final_fingerprint);
  manifest.write(out);

  std::printf("pretrain: %zu steps, final loss %.6f, fingerprint %016llx -> %s\n",
              result.history.steps.size(), result.history.steps.back().loss,
              static_cast<unsigned long long>(result.history.final_fingerprint),
              out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// adapt-channels

int cmd_adapt(const fs::path& ckpt_dir, const std::vector<std::string>& features,
              const fs::path& out) {
  ojson cfg;
  cfg["checkpoint"] = ckpt_dir.string();
  cfg["features"] = features;
  RunManifest manifest("adapt-channels", cfg);

  const CheckpointBundle base = load_checkpoint(ckpt_dir);
  CheckpointBundle expanded = expand_input_channels(base, features);
  manifest.lap("expand");
  save_checkpoint(expanded, out / "checkpoint");
  manifest.add_output(out / "checkpoint" / "manifest.json");
  manifest.lap("save");
  manifest.write(out);
  std::printf("adapt-channels: %lld -> %lld channels -> %s\n",
              (long long)base.config().in_channels, (long long)expanded.config().in_channels,
              out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// finetune

int cmd_finetune(const fs::path& config_path, const fs::path& out) {
  ojson cfg = load_config(config_path);
  const fs::path ckpt_dir = require<std::string>(cfg, "checkpoint");
  const fs::path dataset_dir = require<std::string>(cfg, "dataset");
  const FinetuneMode mode = FinetuneMode::parse(require<std::string>(cfg, "mode"));
  const std::vector<std::uint64_t> seeds =
      get_or<std::vector<std::uint64_t>>(cfg, "seeds", {0});
  if (seeds.empty()) throw ConfigError("finetune needs at least one seed");
  TrainConfig tc_base =
      train_from_json(cfg.contains("train") ? cfg.at("train") : ojson::object(), 1e-4);
  cfg["mode"] = mode.name();
  cfg["train"] = train_to_json(tc_base);
  RunManifest manifest("finetune", cfg);

  const CheckpointBundle base = load_checkpoint(ckpt_dir);
  const PatchDataset ds = load_dataset(dataset_dir);
  if (ds.channels != base.config().in_channels || ds.feature_names != base.feature_names)
    throw ConfigError(
        "dataset features do not match the checkpoint; run adapt-channels first");
  manifest.lap("load");

  // Per-region normalization: fit on the fine-tune training split.
  const NormStats stats = effective_stats(ds);
  PatchDataset with_stats = ds;
  with_stats.norm_stats = stats;

  ojson seed_reports = ojson::array();
  for (const std::uint64_t seed : seeds) {
    auto [init, mask] = apply_finetune_mode(base, mode, seed);
    TrainConfig tc = tc_base;
    tc.seed = seed;

    ojson report;
    report["seed"] = seed;
    report["mode"] = mode.name();
    if (mode.kind == FinetuneKind::RI) report["pretrained_weights"] = "discarded";

    const fs::path seed_dir = out / ("seed_" + std::to_string(seed));
    try {
      const TrainResult result = train(init, mask, with_stats, tc);

      // Freeze verification: masked-out parameters must be bitwise intact.
      bool frozen_ok = true;
      for (size_t i = 0; i < init.specs.size(); ++i)
        if (!mask.at(init.specs[i].path))
          frozen_ok = frozen_ok && result.params.values[i].bitwise_equal(init.values[i]);
      report["frozen_unchanged"] = frozen_ok;
      report["diverged"] = false;
      report["final_loss"] = result.history.steps.back().loss;
      report["final_fingerprint"] = result.history.final_fingerprint;
      if (!frozen_ok) throw IntegrityError("", "freeze mask violated by the optimizer");

      ojson provenance;
      provenance["role"] = "finetune";
      provenance["mode"] = mode.name();
      provenance["seed"] = seed;
      provenance["base_checkpoint"] = ckpt_dir.string();
      provenance["base_fingerprint"] = base.params.fingerprint();
      provenance["dataset"] = ojson{{"region", ds.region},
                                    {"year", ds.year},
                                    {"crop", ds.crop},
                                    {"n_patches", ds.samples.size()}};
      provenance["norm_stats"] = stats_to_json(stats);
      provenance["train"] = train_to_json(tc);
      const CheckpointBundle tuned =
          make_bundle(result.params, ds.feature_names, std::move(provenance));
      save_checkpoint(tuned, seed_dir / "checkpoint");
      result.history.write_jsonl(seed_dir / "history.jsonl");
      manifest.add_output(seed_dir / "checkpoint" / "manifest.json");
      manifest.add_output(seed_dir / "history.jsonl");
    } catch (const DivergenceError& e) {
      // An acceptable, reported outcome for hard regimes (exit stays 0).
      report["diverged"] = true;
      report["diverged_step"] = e.step();
      report["error"] = e.what();
    }
    seed_reports.push_back(std::move(report));
    manifest.lap("seed_" + std::to_string(seed));
  }
  manifest.note("seeds", seed_reports);
  manifest.write(out);

  for (const auto& r : seed_reports) {
    if (r.value("diverged", false))
      std::printf("finetune seed %llu: DIVERGED at step %lld (reported, not fatal)\n",
                  (unsigned long long)r.at("seed").get<std::uint64_t>(),
                  (long long)r.at("diverged_step").get<long>());
    else
      std::printf("finetune seed %llu: mode %s, final loss %.6f, decoder/encoder freeze ok: %s\n",
                  (unsigned long long)r.at("seed").get<std::uint64_t>(),
                  mode.name().c_str(), r.at("final_loss").get<double>(),
                  r.at("frozen_unchanged").get<bool>() ? "true" : "false");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// predict

int cmd_predict(const fs::path& ckpt_dir, const fs::path& dataset_dir, const fs::path& out,
                double threshold, std::vector<Index> early_steps) {
  ojson cfg;
  cfg["checkpoint"] = ckpt_dir.string();
  cfg["dataset"] = dataset_dir.string();
  cfg["threshold"] = threshold;
  RunManifest manifest("predict", cfg);

  const CheckpointBundle bundle = load_checkpoint(ckpt_dir);
  const PatchDataset ds = load_dataset(dataset_dir);
  const NormStats stats = stats_from_provenance(bundle);
  if (early_steps.empty()) early_steps = {bundle.config().time_steps};
  cfg["early_steps"] = early_steps;
  manifest.note("config", cfg);
  manifest.lap("load");

  for (const Index t : early_steps) {
    const auto masks = predict_masks(bundle.params, ds, stats, threshold, t);
    const fs::path tdir = out / ("t" + std::to_string(t));
    fs::create_directories(tdir);
    for (size_t i = 0; i < masks.size(); ++i) {
      Tensor<std::uint8_t> img = masks[i];
      for (Index p = 0; p < img.size(); ++p) img.flat()[p] = img.flat()[p] ? 255 : 0;
      const fs::path file = tdir / ("mask_" + ds.samples[i].id + ".pgm");
      write_pgm(file, img);
      manifest.add_output(file);
    }
    manifest.lap("t" + std::to_string(t));
  }
  manifest.write(out);
  std::printf("predict: %zu patches x %zu horizons -> %s\n", ds.samples.size(),
              early_steps.size(), out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct MethodResult {
  std::string name;
  std::vector<Metrics> per_seed;
  std::vector<std::uint64_t> seeds;
  std::vector<Tensor<std::uint8_t>> first_masks;  // full-T masks of the first seed
  // early sweep: per t_avail, mean metrics over seeds
  std::vector<std::pair<Index, Metrics>> early;
};

Metrics mean_metrics(const std::vector<Metrics>& ms) {
  Metrics m;
  for (const auto& x : ms) {
    m.iou += x.iou;
    m.recall += x.recall;
    m.precision += x.precision;
    m.f1 += x.f1;
  }
  const double n = ms.empty() ? 1.0 : double(ms.size());
  m.iou /= n;
  m.recall /= n;
  m.precision /= n;
  m.f1 /= n;
  return m;
}

int cmd_evaluate(const fs::path& config_path, const fs::path& out, double threshold_flag,
                 std::vector<Index> early_flag) {
  ojson cfg = load_config(config_path);
  const fs::path test_dir = require<std::string>(cfg, "test_dataset");
  const double threshold =
      threshold_flag >= 0.0 ? threshold_flag : get_or<double>(cfg, "threshold", 0.5);
  std::vector<Index> early_steps =
      !early_flag.empty() ? early_flag : get_or<std::vector<Index>>(cfg, "early_steps", {});
  cfg["threshold"] = threshold;
  cfg["early_steps"] = early_steps;
  RunManifest manifest("evaluate", cfg);

  const PatchDataset test = load_dataset(test_dir);
  manifest.lap("load");

  std::vector<MethodResult> results;

  // Random-forest baseline, trained locally on the fine-tune split.
  if (cfg.contains("rf") && !cfg.at("rf").is_null()) {
    const ojson& rfj = cfg.at("rf");
    const fs::path train_dir = require<std::string>(rfj, "train_dataset");
    const PatchDataset rf_train_ds = load_dataset(train_dir);
    RFConfig rc;
    rc.n_trees = get_or<Index>(rfj, "n_trees", 100);
    rc.max_depth = get_or<Index>(rfj, "max_depth", 0);
    rc.pixel_cap = get_or<Index>(rfj, "pixel_cap", rc.pixel_cap);
    const std::vector<std::uint64_t> seeds =
        get_or<std::vector<std::uint64_t>>(rfj, "seeds", {0});

    MethodResult mr;
    mr.name = "RF";
    mr.seeds = seeds;
    for (size_t k = 0; k < seeds.size(); ++k) {
      const RFModel model = rf_train(rf_train_ds, rc, seeds[k]);
      auto masks = rf_predict(model, test, threshold);
      mr.per_seed.push_back(evaluate_masks(masks, test).second);
      if (k == 0) mr.first_masks = std::move(masks);
    }
    results.push_back(std::move(mr));
    manifest.lap("rf");
  }

  // Checkpoint-backed methods.
  for (const ojson& mj : get_or<ojson>(cfg, "methods", ojson::array())) {
    MethodResult mr;
    mr.name = require<std::string>(mj, "name");
    const std::vector<std::string> paths = require<std::vector<std::string>>(mj, "checkpoints");
    if (paths.empty()) throw ConfigError("method '" + mr.name + "' lists no checkpoints");
    for (size_t k = 0; k < paths.size(); ++k) {
      const CheckpointBundle bundle = load_checkpoint(paths[k]);
      const NormStats stats = stats_from_provenance(bundle);
      mr.seeds.push_back(bundle.provenance.value("seed", std::uint64_t(k)));
      auto masks = predict_masks(bundle.params, test, stats, threshold);
      mr.per_seed.push_back(evaluate_masks(masks, test).second);
      if (k == 0) mr.first_masks = std::move(masks);
      for (const Index t : early_steps) {
        auto em = predict_masks(bundle.params, test, stats, threshold, t);
        const Metrics m = evaluate_masks(em, test).second;
        auto it = std::find_if(mr.early.begin(), mr.early.end(),
                               [&](const auto& p) { return p.first == t; });
        if (it == mr.early.end()) {
          mr.early.push_back({t, m});
        } else {
          it->second.iou += m.iou;
          it->second.recall += m.recall;
          it->second.precision += m.precision;
          it->second.f1 += m.f1;
        }
      }
    }
    for (auto& [t, m] : mr.early) {
      const double n = double(paths.size());
      m.iou /= n;
      m.recall /= n;
      m.precision /= n;
      m.f1 /= n;
    }
    const std::string stage = mr.name;
    results.push_back(std::move(mr));
    manifest.lap(stage);
  }
  if (results.empty()) throw ConfigError("evaluate: no methods configured");

  // Report.
  ojson report;
  const int scenario_id = get_or<int>(cfg, "scenario_id", 0);
  if (scenario_id != 0) {
    const ScenarioPreset* sc = find_scenario(scenario_id);
    if (!sc) throw ConfigError("unknown scenario_id: " + std::to_string(scenario_id));
    report["scenario"] = ojson{{"id", sc->id},
                               {"finetune_region", sc->finetune_region},
                               {"test_region", sc->test_region},
                               {"crop", sc->crop},
                               {"features", sc->features}};
    report["reference_values"] = scenario_reference(*sc);
  } else {
    report["scenario"] = ojson{{"id", nullptr},
                               {"test_region", test.region},
                               {"crop", test.crop},
                               {"features", test.feature_names}};
  }
  report["threshold"] = threshold;
  report["test_patches"] = test.samples.size();
  ojson methods_json = ojson::array();
  for (const auto& mr : results) {
    // Aggregation is reported in seed order no matter how runs were listed.
    std::vector<size_t> order(mr.seeds.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return mr.seeds[a] < mr.seeds[b]; });
    ojson mj;
    mj["name"] = mr.name;
    ojson seeds_json = ojson::array(), per_seed = ojson::array();
    for (const size_t i : order) {
      seeds_json.push_back(mr.seeds[i]);
      ojson entry = metrics_to_json(mr.per_seed[i]);
      entry["seed"] = mr.seeds[i];
      per_seed.push_back(std::move(entry));
    }
    mj["seeds"] = std::move(seeds_json);
    mj["per_seed"] = std::move(per_seed);
    mj["mean"] = metrics_to_json(mean_metrics(mr.per_seed));
    if (!mr.early.empty()) {
      ojson sweep = ojson::array();
      for (const auto& [t, m] : mr.early) {
        ojson e = metrics_to_json(m);
        e["t_avail"] = t;
        sweep.push_back(std::move(e));
      }
      mj["early_sweep"] = std::move(sweep);
    }
    methods_json.push_back(std::move(mj));
  }
  report["methods"] = std::move(methods_json);
  fs::create_directories(out);
  write_json_file(out / "report.json", report);
  manifest.add_output(out / "report.json");

  // Mosaic: image | label | one column per method (first seed's masks).
  const NormStats mosaic_stats = effective_stats(test);
  MosaicMethods columns;
  for (const auto& mr : results) columns.push_back({mr.name, &mr.first_masks});
  write_ppm(out / "mosaic.ppm", render_mosaic(test, mosaic_stats, columns));
  manifest.add_output(out / "mosaic.ppm");
  for (const auto& mr : results) {
    const fs::path mdir = out / "masks" / mr.name;
    fs::create_directories(mdir);
    for (size_t i = 0; i < mr.first_masks.size(); ++i) {
      Tensor<std::uint8_t> img = mr.first_masks[i];
      for (Index p = 0; p < img.size(); ++p) img.flat()[p] = img.flat()[p] ? 255 : 0;
      const fs::path file = mdir / ("mask_" + test.samples[i].id + ".pgm");
      write_pgm(file, img);
      manifest.add_output(file);
    }
  }
  manifest.lap("report");
  manifest.write(out);

  for (const auto& mr : results) {
    const Metrics m = mean_metrics(mr.per_seed);
    std::printf("evaluate %-8s iou %.4f recall %.4f precision %.4f f1 %.4f (%zu seeds)\n",
                mr.name.c_str(), m.iou, m.recall, m.precision, m.f1, mr.per_seed.size());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// verify-checkpoint

int cmd_verify(const fs::path& ckpt_dir, const fs::path& base_dir) {
  const CheckpointBundle bundle = load_checkpoint(ckpt_dir);
  std::printf("checkpoint ok: %zu parameters, fingerprint %016llx\n",
              bundle.params.specs.size(),
              static_cast<unsigned long long>(bundle.params.fingerprint()));
  std::printf("  config: C=%lld T=%lld depth=%lld base=%lld patch=%lld\n",
              (long long)bundle.config().in_channels, (long long)bundle.config().time_steps,
              (long long)bundle.config().depth, (long long)bundle.config().base_channels,
              (long long)bundle.config().patch_size);

  if (base_dir.empty()) return 0;

  // Duplication identity against the pre-expansion checkpoint: feed the base
  // model a random input, feed the expanded model the channel-duplicated
  // version, and compare outputs.
  const CheckpointBundle base = load_checkpoint(base_dir);
  const ModelConfig& bc = base.config();
  const ModelConfig& ec = bundle.config();
  if (bc.time_steps != ec.time_steps || bc.patch_size != ec.patch_size ||
      bc.depth != ec.depth || bc.base_channels != ec.base_channels)
    throw ConfigError("base/expanded checkpoints disagree beyond in_channels");

  // Source channel per expanded feature: name match first, then tiling.
  std::vector<Index> src;
  std::vector<Index> uses(static_cast<size_t>(bc.in_channels), 0);
  for (size_t j = 0; j < bundle.feature_names.size(); ++j) {
    const auto it = std::find(base.feature_names.begin(), base.feature_names.end(),
                              bundle.feature_names[j]);
    const Index s = it != base.feature_names.end()
                        ? static_cast<Index>(it - base.feature_names.begin())
                        : static_cast<Index>(j) % bc.in_channels;
    src.push_back(s);
    ++uses[static_cast<size_t>(s)];
  }
  for (Index c = 0; c < bc.in_channels; ++c)
    if (uses[static_cast<size_t>(c)] != uses[0])
      throw ConfigError(
          "duplication identity needs every base channel duplicated equally often");

  Rng rng(424242);
  const Index t = bc.time_steps, hp = bc.patch_size;
  Tensor<float> x_old({1, t, bc.in_channels, hp, hp});
  for (Index i = 0; i < x_old.size(); ++i)
    x_old.flat()[i] = static_cast<float>(rng.uniform());
  Tensor<float> x_new({1, t, ec.in_channels, hp, hp});
  const Index hw = hp * hp;
  for (Index ti = 0; ti < t; ++ti)
    for (Index j = 0; j < ec.in_channels; ++j)
      std::memcpy(x_new.data() + (ti * ec.in_channels + j) * hw,
                  x_old.data() + (ti * bc.in_channels + src[static_cast<size_t>(j)]) * hw,
                  sizeof(float) * static_cast<size_t>(hw));

  const Tensor<float> y_old = forward(base.params, BatchTensor<float>::checked(x_old, {t}));
  const Tensor<float> y_new = forward(bundle.params, BatchTensor<float>::checked(x_new, {t}));
  float worst = 0.0f;
  for (Index i = 0; i < y_old.size(); ++i)
    worst = std::max(worst, std::abs(y_old.flat()[i] - y_new.flat()[i]));
  std::printf("duplication identity: max |dy| = %.3e (tolerance 1e-5)\n", double(worst));
  if (worst > 1e-5f) throw IntegrityError("", "duplication identity violated");
  return 0;
}

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::divergence: return "divergence";
  }
  return "internal";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crop-type segmentation transfer-learning toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt, dataset, base;
  std::vector<std::string> features;
  long seed = -1;
  double ratio = 0.6, threshold = -1.0;
  std::vector<Index> early_steps;
  int rc = 0;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--config", config_path, "Synth spec JSON")->required();
  synth->add_option("--out", out_dir, "Output dataset directory")->required();
  synth->add_option("--seed", seed, "Seed override");
  synth->callback([&] { rc = cmd_synth(config_path, out_dir, seed); });

  auto* split = app.add_subcommand("split", "Split a dataset into train/test");
  split->add_option("dataset", dataset, "Dataset directory")->required();
  split->add_option("--ratio", ratio, "Train fraction (default 0.6)");
  split->add_option("--seed", seed, "Split seed")->required();
  split->add_option("--out", out_dir, "Output directory (train/ and test/)")->required();
  split->callback([&] { rc = cmd_split(dataset, ratio, seed, out_dir); });

  auto* pre = app.add_subcommand("pretrain", "Train a model from scratch");
  pre->add_option("--config", config_path, "Pretrain config JSON")->required();
  pre->add_option("--out", out_dir, "Output directory")->required();
  pre->add_option("--seed", seed, "Seed override");
  pre->callback([&] { rc = cmd_pretrain(config_path, out_dir, seed); });

  auto* adapt = app.add_subcommand("adapt-channels", "Expand checkpoint input channels");
  adapt->add_option("checkpoint", ckpt, "Checkpoint directory")->required();
  adapt->add_option("--features", features, "New feature list (e.g. VH,VV)")
      ->required()
      ->delimiter(',');
  adapt->add_option("--out", out_dir, "Output directory")->required();
  adapt->callback([&] { rc = cmd_adapt(ckpt, features, out_dir); });

  auto* ft = app.add_subcommand("finetune", "Fine-tune a checkpoint under a regime");
  ft->add_option("--config", config_path, "Scenario config JSON")->required();
  ft->add_option("--out", out_dir, "Output directory")->required();
  ft->callback([&] { rc = cmd_finetune(config_path, out_dir); });

  auto* pred = app.add_subcommand("predict", "Write prediction masks for a dataset");
  pred->add_option("checkpoint", ckpt, "Checkpoint directory")->required();
  pred->add_option("dataset", dataset, "Dataset directory")->required();
  pred->add_option("--out", out_dir, "Output directory")->required();
  pred->add_option("--threshold", threshold, "Decision threshold (default 0.5)");
  pred->add_option("--early-steps", early_steps, "t_avail list (default full series)")
      ->delimiter(',');
  pred->callback([&] {
    rc = cmd_predict(ckpt, dataset, out_dir, threshold < 0 ? 0.5 : threshold, early_steps);
  });

  auto* ev = app.add_subcommand("evaluate", "Evaluate methods on a test set");
  ev->add_option("--config", config_path, "Evaluation config JSON")->required();
  ev->add_option("--out", out_dir, "Output directory")->required();
  ev->add_option("--threshold", threshold, "Threshold override");
  ev->add_option("--early-steps", early_steps, "Early-prediction sweep")->delimiter(',');
  ev->callback([&] { rc = cmd_evaluate(config_path, out_dir, threshold, early_steps); });

  auto* verify = app.add_subcommand("verify-checkpoint", "Integrity-check a checkpoint");
  verify->add_option("checkpoint", ckpt, "Checkpoint directory")->required();
  verify->add_option("--base", base, "Pre-expansion checkpoint for the duplication identity");
  verify->callback([&] { rc = cmd_verify(ckpt, base); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: [config] " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: [" << kind_name(e.kind()) << "] " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: [internal] " << e.what() << "\n";
    return 1;
  }
  return rc;
}
