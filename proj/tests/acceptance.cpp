// Acceptance gate: one PASS/FAIL line per criterion, exit 0 only when every
// criterion holds. Criteria 7, 8, and 10 share one pretrained source model,
// built on first use inside criterion 7's time budget.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <cropseg/cropseg.hpp>

using namespace cropseg;

namespace {

// ---------------------------------------------------------------------------
// Harness

struct Failure {
  std::string reason;
};

void require(bool ok, const std::string& reason) {
  if (!ok) throw Failure{reason};
}

std::vector<std::string> g_info;  // indented diagnostics for the current criterion

void info(const std::string& line) { g_info.push_back(line); }

// ---------------------------------------------------------------------------
// Small shared utilities

BatchTensor<float> random_batch(const ModelConfig& c, Index b, std::uint64_t seed) {
  BatchTensor<float> batch;
  batch.x = Tensor<float>({b, c.time_steps, c.in_channels, c.patch_size, c.patch_size});
  Rng rng(seed);
  for (Index i = 0; i < batch.x.size(); ++i)
    batch.x.data()[i] = static_cast<float>(rng.uniform());
  batch.valid_steps.assign(static_cast<size_t>(b), c.time_steps);
  return batch;
}

TrainableMask full_mask(const ParameterSet<float>& params) {
  TrainableMask mask;
  for (const auto& s : params.specs) mask[s.path] = true;
  return mask;
}

double micro_iou(const ParameterSet<float>& params, const PatchDataset& test,
                 const NormStats& stats) {
  const auto masks = predict_masks(params, test, stats, 0.5);
  return evaluate_masks(masks, test).second.iou;
}

// ---------------------------------------------------------------------------
// Shared transfer fixtures (criteria 7, 8, 10)

struct SharedModels {
  ModelConfig cfg;                 // desk config: 64x64, base 8, depth 2
  CheckpointBundle pretrained;     // source model, 200 patches, {VH}
  NormStats source_stats;          // normalization the source model trained with
  std::vector<float> source_vh;    // the generating VH curve of the target crop
  bool ready = false;
};

SharedModels& shared_models() {
  static SharedModels s;
  if (s.ready) return s;

  s.cfg = ModelConfig::desk_scale();
  s.cfg.time_steps = 8;
  s.cfg.in_channels = 1;
  s.cfg.dropout_rate = 0.0;
  s.cfg.validate();

  SynthSpec src_spec = SynthSpec::rice_like(200, 64, 8, {"VH"}, 0.08);
  src_spec.region = "source";
  for (const auto& cl : src_spec.classes)
    if (cl.target) s.source_vh = cl.curves[0];
  PatchDataset source = generate_synthetic_dataset(src_spec, 4021);

  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.learning_rate = 1e-3;
  tc.curriculum = true;
  tc.seed = 90210;
  const ParameterSet<float> init = build_model<float>(s.cfg, 90210);
  const TrainResult result = train(init, full_mask(init), source, tc);

  const NormStats stats = effective_stats(source);
  s.source_stats = stats;
  ojson provenance;
  provenance["role"] = "pretrain";
  provenance["norm_stats"] = ojson{{"min", stats.min}, {"max", stats.max}};
  s.pretrained = make_bundle(result.params, source.feature_names, std::move(provenance));

  const double src_iou = micro_iou(result.params, source, stats);
  info("source pretrain: final loss " + std::to_string(result.history.steps.back().loss) +
       ", source-set IoU " + std::to_string(src_iou));
  s.ready = true;
  return s;
}

// One fine-tune arm: start from `mode` applied to the shared checkpoint,
// train on the target split, report micro IoU on the target test split.
double finetune_arm(const FinetuneMode& mode, std::uint64_t seed, const PatchDataset& train_ds,
                    const PatchDataset& test_ds, const NormStats& stats, double lr,
                    Index epochs, const CheckpointBundle& base) {
  auto [init, mask] = apply_finetune_mode(base, mode, seed);
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 4;
  tc.learning_rate = lr;
  tc.curriculum = true;
  tc.seed = seed;
  PatchDataset with_stats = train_ds;
  with_stats.norm_stats = stats;
  const TrainResult result = train(init, mask, with_stats, tc);
  return micro_iou(result.params, test_ds, stats);
}

// ---------------------------------------------------------------------------
// Criterion 1: channel-expansion identity over 20 random desk-scale models.

void criterion_1() {
  float worst_dy = 0.0f;
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig cfg = ModelConfig::desk_scale();
    cfg.time_steps = 8;
    cfg.in_channels = 1 + (trial % 2);
    cfg.validate();
    const std::vector<std::string> old_names =
        cfg.in_channels == 1 ? std::vector<std::string>{"VH"}
                             : std::vector<std::string>{"VH", "VV"};
    // Balanced duplication: every source channel appears twice.
    const std::vector<std::string> new_names =
        cfg.in_channels == 1 ? std::vector<std::string>{"VH", "VH"}
                             : std::vector<std::string>{"VH", "VV", "VH", "VV"};

    const ParameterSet<float> params = build_model<float>(cfg, 1000 + trial);
    const CheckpointBundle base = make_bundle(params, old_names);
    const CheckpointBundle expanded = expand_input_channels(base, new_names);

    // Every parameter except the first conv kernel must be bitwise unchanged.
    for (size_t i = 0; i < base.params.specs.size(); ++i) {
      const std::string& path = base.params.specs[i].path;
      if (path == "encoder.0.conv1.weight") continue;
      size_t ei = 0;
      while (expanded.params.specs[ei].path != path) ++ei;
      require(expanded.params.values[ei].bitwise_equal(base.params.values[i]),
              "trial " + std::to_string(trial) + ": " + path + " changed under expansion");
    }

    const BatchTensor<float> bx = random_batch(cfg, 1, 2000 + trial);
    BatchTensor<float> bx2;
    bx2.x = Tensor<float>({1, cfg.time_steps, static_cast<Index>(new_names.size()),
                           cfg.patch_size, cfg.patch_size});
    bx2.valid_steps = bx.valid_steps;
    const Index hw = cfg.patch_size * cfg.patch_size;
    const Index c_old = cfg.in_channels, c_new = static_cast<Index>(new_names.size());
    for (Index t = 0; t < cfg.time_steps; ++t)
      for (Index j = 0; j < c_new; ++j)
        std::memcpy(bx2.x.data() + (t * c_new + j) * hw,
                    bx.x.data() + (t * c_old + j % c_old) * hw,
                    sizeof(float) * static_cast<size_t>(hw));

    const Tensor<float> y0 = forward(base.params, bx);
    const Tensor<float> y1 = forward(expanded.params, bx2);
    for (Index i = 0; i < y0.size(); ++i)
      worst_dy = std::max(worst_dy, std::abs(y0.data()[i] - y1.data()[i]));
  }
  info("max |dy| over 20 models: " + std::to_string(worst_dy));
  require(worst_dy <= 1e-5f, "duplication identity violated: max |dy| = " +
                                 std::to_string(worst_dy) + " > 1e-5");
}

// ---------------------------------------------------------------------------
// Criterion 2: freeze soundness over 50 fine-tune steps (FT_E and FT_D).

void criterion_2() {
  ModelConfig cfg;
  cfg.patch_size = 32;
  cfg.depth = 2;
  cfg.base_channels = 8;
  cfg.time_steps = 8;
  cfg.in_channels = 1;
  cfg.dropout_rate = 0.0;
  cfg.validate();

  const SynthSpec spec = SynthSpec::rice_like(10, 32, 8, {"VH"}, 0.05);
  const PatchDataset ds = generate_synthetic_dataset(spec, 31337);
  const CheckpointBundle base =
      make_bundle(build_model<float>(cfg, 2026), ds.feature_names);

  for (const char* mode_name : {"ft_e", "ft_d"}) {
    const FinetuneMode mode = FinetuneMode::parse(mode_name);
    auto [init, mask] = apply_finetune_mode(base, mode, 17);
    TrainConfig tc;
    tc.epochs = 10;  // 10 epochs x ceil(10/2) batches = 50 steps
    tc.batch_size = 2;
    tc.learning_rate = 1e-4;
    tc.curriculum = false;
    tc.seed = 17;
    const TrainResult result = train(init, mask, ds, tc);
    require(result.history.steps.size() == 50,
            std::string(mode_name) + ": expected 50 steps, got " +
                std::to_string(result.history.steps.size()));

    const ParamGroup frozen_group =
        mode.kind == FinetuneKind::FT_E ? ParamGroup::decoder : ParamGroup::encoder;
    bool any_moved = false;
    for (size_t i = 0; i < init.specs.size(); ++i) {
      const bool same = result.params.values[i].bitwise_equal(init.values[i]);
      if (init.specs[i].group == frozen_group)
        require(same, std::string(mode_name) + ": frozen parameter " + init.specs[i].path +
                          " changed after 50 steps");
      else
        any_moved = any_moved || !same;
    }
    require(any_moved, std::string(mode_name) + ": trainable half never moved");
  }
  info("FT_E decoder and FT_D encoder bitwise intact after 50 Adam steps each");
}

// ---------------------------------------------------------------------------
// Criterion 3: double-precision gradient check on the tiny config.

struct GradProblem {
  ModelConfig cfg;
  ParameterSet<double> params;
  Tensor<double> x;
  Tensor<std::uint8_t> labels;
};

GradProblem make_grad_problem(std::uint64_t seed) {
  GradProblem p;
  p.cfg.patch_size = 16;
  p.cfg.depth = 2;
  p.cfg.base_channels = 4;
  p.cfg.time_steps = 4;
  p.cfg.in_channels = 1;
  p.cfg.temporal_pool_window = 2;
  p.cfg.dropout_rate = 0.0;
  p.cfg.validate();
  p.params = build_model<double>(p.cfg, seed);
  Rng rng(seed ^ 0xabcdef12345ULL);
  for (auto& t : p.params.values)
    for (Index i = 0; i < t.size(); ++i) t.data()[i] += rng.uniform(-0.05, 0.05);
  const Index n = p.cfg.time_steps * p.cfg.in_channels * p.cfg.patch_size * p.cfg.patch_size;
  p.x = Tensor<double>({n});
  for (Index i = 0; i < n; ++i) p.x.data()[i] = rng.uniform(0.05, 0.95);
  p.labels = Tensor<std::uint8_t>({p.cfg.patch_size, p.cfg.patch_size});
  for (Index i = 0; i < p.labels.size(); ++i)
    p.labels.data()[i] = static_cast<std::uint8_t>(rng.below(2));
  return p;
}

void criterion_3() {
  GradProblem p = make_grad_problem(424242);
  SampleTrace<double> tr;
  forward_sample(p.params, p.x.data(), tr);
  const double denom = static_cast<double>(p.cfg.patch_size * p.cfg.patch_size);
  Tensor<double> dlogits;
  detail::loss_grad_logits(tr.logits, p.labels.data(), 1.0, denom, dlogits);
  auto grads = ParameterSet<double>::shaped(p.cfg);
  backward_sample(p.params, tr, dlogits, grads);

  // >= 50 sampled coordinates, every tensor visited at least once.
  std::vector<std::pair<size_t, Index>> picks;
  Rng rng(55);
  for (size_t ti = 0; ti < p.params.values.size(); ++ti)
    picks.emplace_back(ti, static_cast<Index>(rng.below(
                               static_cast<std::uint64_t>(p.params.values[ti].size()))));
  while (picks.size() < 60) {
    const size_t ti = static_cast<size_t>(rng.below(p.params.values.size()));
    picks.emplace_back(ti, static_cast<Index>(rng.below(
                               static_cast<std::uint64_t>(p.params.values[ti].size()))));
  }

  SampleTrace<double> scratch;
  auto loss_at = [&]() {
    forward_sample(p.params, p.x.data(), scratch);
    return detail::loss_from_logits(scratch.logits, p.labels.data(), 1.0) / denom;
  };

  double worst = 0.0;
  for (auto [ti, j] : picks) {
    double& v = p.params.values[ti].data()[j];
    const double keep = v;
    const double an = grads.values[ti].data()[j];
    // ReLU kinks pollute a fixed-width stencil by O(h); taking the best
    // agreement over a ladder of widths removes that while leaving any real
    // analytic bug (h-independent) exposed. The 1e-4 denominator floor keeps
    // the ratio meaningful where the gradient itself is ~0.
    double rel = 1e300;
    for (const double h : {1e-5, 1e-6, 1e-7}) {
      v = keep + h;
      const double lp = loss_at();
      v = keep - h;
      const double lm = loss_at();
      v = keep;
      const double fd = (lp - lm) / (2 * h);
      rel = std::min(rel, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-4}));
      if (rel <= 1e-5) break;
    }
    worst = std::max(worst, rel);
  }
  info("checked " + std::to_string(picks.size()) +
       " coordinates, worst relative error " + std::to_string(worst));
  require(worst <= 1e-3,
          "worst relative error " + std::to_string(worst) + " exceeds 1e-3");
}

// ---------------------------------------------------------------------------
// Criterion 4: early-prediction identity and zero-padding law.

void criterion_4() {
  ModelConfig cfg;
  cfg.patch_size = 16;
  cfg.depth = 2;
  cfg.base_channels = 4;
  cfg.time_steps = 6;
  cfg.in_channels = 2;
  cfg.dropout_rate = 0.0;
  cfg.validate();
  const ParameterSet<float> ps = build_model<float>(cfg, 606);
  const BatchTensor<float> batch = random_batch(cfg, 2, 607);

  const Tensor<float> full = forward(ps, batch);
  const Tensor<float> early_full = forward_early(ps, batch, cfg.time_steps);
  require(std::memcmp(full.data(), early_full.data(),
                      sizeof(float) * static_cast<size_t>(full.size())) == 0,
          "forward_early(., T) differs bitwise from forward(.)");

  const Index slab = cfg.in_channels * cfg.patch_size * cfg.patch_size;
  for (Index t_avail = 1; t_avail <= cfg.time_steps; ++t_avail) {
    BatchTensor<float> padded;
    padded.x = batch.x;
    padded.valid_steps = batch.valid_steps;
    for (Index b = 0; b < 2; ++b)
      for (Index t = t_avail; t < cfg.time_steps; ++t)
        std::memset(padded.x.data() + (b * cfg.time_steps + t) * slab, 0,
                    sizeof(float) * static_cast<size_t>(slab));
    const Tensor<float> via_pad = forward(ps, padded);
    const Tensor<float> via_early = forward_early(ps, batch, t_avail);
    require(std::memcmp(via_pad.data(), via_early.data(),
                        sizeof(float) * static_cast<size_t>(via_pad.size())) == 0,
            "zero-padding law broken at t_avail " + std::to_string(t_avail));
  }
  info("identity at T and padding law at every t_avail in 1.." +
       std::to_string(cfg.time_steps));
}

// ---------------------------------------------------------------------------
// Criterion 5: curriculum schedule property over 200 random draws.

void criterion_5() {
  Rng pick(314159);
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = 1 + static_cast<Index>(pick.below(30));
    const Index batch = 1 + static_cast<Index>(pick.below(8));
    const Index t = 1 + static_cast<Index>(pick.below(10));
    const std::uint64_t seed = pick.next();

    const auto plan = make_curriculum_schedule(n, batch, t, seed);
    const auto again = make_curriculum_schedule(n, batch, t, seed);
    require(plan.size() == again.size(), "schedule not seed-deterministic (size)");
    for (size_t i = 0; i < plan.size(); ++i)
      require(plan[i].samples == again[i].samples && plan[i].t_avail == again[i].t_avail,
              "schedule not seed-deterministic (content)");

    const Index per_phase = (n + batch - 1) / batch;
    require(static_cast<Index>(plan.size()) == t * per_phase,
            "wrong batch count in schedule");
    Index prev = 0, at = 0;
    for (Index phase = 1; phase <= t; ++phase) {
      std::set<Index> seen;
      for (Index b = 0; b < per_phase; ++b, ++at) {
        const auto& bp = plan[static_cast<size_t>(at)];
        require(bp.t_avail == phase && bp.t_avail >= prev, "phases not non-decreasing");
        prev = bp.t_avail;
        for (Index s : bp.samples) {
          require(s >= 0 && s < n, "sample index out of range");
          seen.insert(s);
        }
      }
      require(static_cast<Index>(seen.size()) == n,
              "phase does not cover every sample exactly once");
    }
  }
  info("200 random (n, batch, T) draws verified");
}

// ---------------------------------------------------------------------------
// Criterion 6: metric oracle on 1000 random mask pairs + micro-average law.

void criterion_6() {
  Rng rng(271828);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index h = 1 + static_cast<Index>(rng.below(8));
    const Index w = 1 + static_cast<Index>(rng.below(8));
    Tensor<std::uint8_t> pred({h, w}), truth({h, w});
    for (Index i = 0; i < h * w; ++i) {
      pred.flat()[i] = static_cast<std::uint8_t>(rng.below(2));
      truth.flat()[i] = static_cast<std::uint8_t>(rng.below(2));
    }
    // Brute-force pixel loop, independent of the library's counting.
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (Index i = 0; i < h * w; ++i) {
      const bool p = pred.flat()[i] != 0, y = truth.flat()[i] != 0;
      if (p && y) ++tp;
      else if (p) ++fp;
      else if (y) ++fn;
      else ++tn;
    }
    const auto counts = confusion_counts(pred, truth);
    require(counts.tp == tp && counts.fp == fp && counts.fn == fn && counts.tn == tn,
            "confusion counts disagree with the pixel loop");
    const Metrics m = compute_metrics(counts);
    const double iou = tp + fp + fn == 0 ? 0.0 : double(tp) / double(tp + fp + fn);
    const double rec = tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn);
    const double prec = tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp);
    const double f1 = prec + rec == 0.0 ? 0.0 : 2.0 * prec * rec / (prec + rec);
    require(m.iou == iou && m.recall == rec && m.precision == prec && m.f1 == f1,
            "metrics disagree with the oracle");
  }

  // Micro-average law: metrics of summed counts == dataset-level evaluation.
  SynthSpec spec = SynthSpec::rice_like(6, 16, 4, {"VH"}, 0.1);
  spec.min_field_size = 3;
  spec.max_field_size = 8;
  const PatchDataset ds = generate_synthetic_dataset(spec, 5150);
  std::vector<Tensor<std::uint8_t>> preds;
  Rng prng(5151);
  ConfusionCounts agg;
  for (const auto& s : ds.samples) {
    Tensor<std::uint8_t> p({ds.height, ds.width});
    for (Index i = 0; i < p.size(); ++i)
      p.flat()[i] = static_cast<std::uint8_t>(prng.below(2));
    agg += confusion_counts(p, s.y);
    preds.push_back(std::move(p));
  }
  const auto [counts, metrics] = evaluate_masks(preds, ds);
  require(counts.tp == agg.tp && counts.fp == agg.fp && counts.fn == agg.fn &&
              counts.tn == agg.tn,
          "micro-average counts do not equal the summed per-patch counts");
  const Metrics direct = compute_metrics(agg);
  require(metrics.iou == direct.iou && metrics.f1 == direct.f1,
          "micro-average metrics do not equal metrics of summed counts");
  info("1000 mask pairs exact; micro-average law holds");
}

// ---------------------------------------------------------------------------
// Criterion 7: transfer benefit on a shifted-target task.

void criterion_7() {
  SharedModels& sm = shared_models();

  SynthSpec tgt_spec = SynthSpec::rice_like(50, 64, 8, {"VH"}, 0.15);
  tgt_spec.region = "target";
  for (auto& cl : tgt_spec.classes)
    if (cl.target)
      for (auto& curve : cl.curves)
        for (auto& v : curve) v = std::clamp(v - 0.10f, 0.0f, 1.0f);
  const PatchDataset target = generate_synthetic_dataset(tgt_spec, 777);
  auto [train_ds, test_ds] = split_train_test(target, 0.4, 5);
  require(train_ds.samples.size() == 20, "expected a 20-patch fine-tune split");
  const NormStats stats = effective_stats(train_ds);

  double ri_sum = 0, ft_sum = 0, fte_sum = 0;
  for (const std::uint64_t seed : {1, 2, 3}) {
    const double ri = finetune_arm(FinetuneMode::parse("ri"), seed, train_ds, test_ds,
                                   stats, 1e-3, 2, sm.pretrained);
    const double ft = finetune_arm(FinetuneMode::parse("ft"), seed, train_ds, test_ds,
                                   stats, 3e-4, 2, sm.pretrained);
    const double fte = finetune_arm(FinetuneMode::parse("ft_e"), seed, train_ds, test_ds,
                                    stats, 3e-4, 2, sm.pretrained);
    info("seed " + std::to_string(seed) + ": RI " + std::to_string(ri) + "  FT " +
         std::to_string(ft) + "  FT_E " + std::to_string(fte));
    ri_sum += ri;
    ft_sum += ft;
    fte_sum += fte;
  }
  const double ri = ri_sum / 3, ft = ft_sum / 3, fte = fte_sum / 3;
  info("means: RI " + std::to_string(ri) + "  FT " + std::to_string(ft) + "  FT_E " +
       std::to_string(fte));
  require(fte >= ri + 0.05, "FT_E mean IoU " + std::to_string(fte) +
                                " < RI + 0.05 (RI = " + std::to_string(ri) + ")");
  require(ft >= ri,
          "FT mean IoU " + std::to_string(ft) + " < RI (" + std::to_string(ri) + ")");
}

// ---------------------------------------------------------------------------
// Criterion 8: two-variant diagnostic (TP curve nearer the source signature).

void criterion_8() {
  SharedModels& sm = shared_models();
  const std::vector<double> source_curve(sm.source_vh.begin(), sm.source_vh.end());

  // Diagnose the transferred source model (criterion 7's pretrain) on targets
  // holding two variants: A keeps the source phenology, B expresses it weakly
  // (its curves sit 65% of the way toward the flat background level, as for a
  // stressed crop with a shallow flooding signal). The transferred model
  // recovers A — true positives trace the source signature — and misses B, so
  // false negatives trace the off-distribution curve. Three seeds draw three
  // independent target datasets.
  const NormStats& stats = sm.source_stats;
  for (const std::uint64_t seed : {1, 2, 3}) {
    SynthSpec spec = SynthSpec::rice_like(24, 64, 8, {"VH"}, 0.10);
    spec.region = "two-variant";
    ClassCurve variant_b;
    for (const auto& cl : spec.classes)
      if (cl.target) variant_b = cl;
    variant_b.name += "_b";
    for (auto& curve : variant_b.curves)
      for (auto& v : curve) v = 0.40f + 0.35f * (v - 0.40f);
    spec.classes.push_back(variant_b);
    const PatchDataset target = generate_synthetic_dataset(spec, 888 + seed);

    const auto preds = predict_masks(sm.pretrained.params, target, stats, 0.5);
    const MeanSeries series = tp_fn_mean_series(preds, target, 0);
    require(series.tp_present, "seed " + std::to_string(seed) + ": no true positives");
    require(series.fn_present, "seed " + std::to_string(seed) + ": no false negatives");
    const double d_tp = l2_distance(series.tp, source_curve);
    const double d_fn = l2_distance(series.fn, source_curve);
    info("seed " + std::to_string(seed) + ": L2(TP, source) " + std::to_string(d_tp) +
         " vs L2(FN, source) " + std::to_string(d_fn));
    require(d_tp < d_fn, "seed " + std::to_string(seed) +
                             ": TP curve not strictly closer to the source signature");
  }
}

// ---------------------------------------------------------------------------
// Criterion 9: round-trips bitwise; corruption names the offending entry.

void criterion_9() {
  const fs::path root = fs::temp_directory_path() / "cropseg_acceptance_c9";
  fs::remove_all(root);

  // Dataset round-trip.
  SynthSpec spec = SynthSpec::rice_like(4, 16, 4, {"VH", "VV"}, 0.1);
  spec.min_field_size = 3;
  spec.max_field_size = 8;
  PatchDataset ds = generate_synthetic_dataset(spec, 99);
  ds.norm_stats = effective_stats(ds);
  save_dataset(ds, root / "ds");
  const PatchDataset back = load_dataset(root / "ds");
  require(back.samples.size() == ds.samples.size(), "dataset round-trip lost samples");
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    require(back.samples[i].id == ds.samples[i].id, "dataset round-trip changed ids");
    require(back.samples[i].x.bitwise_equal(ds.samples[i].x),
            "dataset round-trip changed patch bytes");
    require(back.samples[i].y.bitwise_equal(ds.samples[i].y),
            "dataset round-trip changed label bytes");
  }

  // Checkpoint round-trip.
  ModelConfig cfg;
  cfg.patch_size = 16;
  cfg.depth = 2;
  cfg.base_channels = 4;
  cfg.time_steps = 4;
  cfg.in_channels = 2;
  cfg.validate();
  const CheckpointBundle bundle =
      make_bundle(build_model<float>(cfg, 123), {"VH", "VV"}, ojson{{"role", "test"}});
  save_checkpoint(bundle, root / "ckpt");
  const CheckpointBundle loaded = load_checkpoint(root / "ckpt");
  require(loaded.params.fingerprint() == bundle.params.fingerprint(),
          "checkpoint round-trip changed the fingerprint");
  for (size_t i = 0; i < bundle.params.values.size(); ++i)
    require(loaded.params.values[i].bitwise_equal(bundle.params.values[i]),
            "checkpoint round-trip changed " + bundle.params.specs[i].path);

  // Corruption answers with integrity errors naming the entry.
  std::vector<std::uint8_t> bytes;
  require(read_file_bytes(root / "ckpt" / "params.bin", bytes), "cannot reread params.bin");
  bytes.resize(bytes.size() / 2);
  write_file_bytes(root / "ckpt" / "params.bin", bytes.data(), bytes.size());
  bool named = false;
  try {
    (void)load_checkpoint(root / "ckpt");
  } catch (const IntegrityError& e) {
    named = !e.entry().empty();
    info("checkpoint corruption names entry '" + e.entry() + "'");
  }
  require(named, "truncated checkpoint did not raise an entry-naming integrity error");

  const fs::path victim = root / "ds" / ("patch_" + ds.samples[1].id + ".bin");
  require(read_file_bytes(victim, bytes), "cannot reread patch file");
  bytes.resize(bytes.size() / 2);
  write_file_bytes(victim, bytes.data(), bytes.size());
  named = false;
  try {
    (void)load_dataset(root / "ds");
  } catch (const IntegrityError& e) {
    named = e.entry() == ds.samples[1].id;
    info("dataset corruption names entry '" + e.entry() + "'");
  }
  require(named, "truncated patch did not raise an integrity error naming the patch id");
}

// ---------------------------------------------------------------------------
// Criterion 10: a discriminative second channel helps an adapted checkpoint.

void criterion_10() {
  SharedModels& sm = shared_models();

  // The confuser class matches the target exactly in the first feature and
  // is separable only through the second: the single-channel view of this
  // task is ambiguous by construction.
  SynthSpec spec = SynthSpec::rice_like(50, 64, 8, {"VH", "VV"}, 0.10);
  spec.region = "two-feature";
  spec.confuser_class = true;
  const PatchDataset target = generate_synthetic_dataset(spec, 999);
  auto [train2, test2] = split_train_test(target, 0.4, 7);
  const PatchDataset train1 = select_features(train2, {"VH"});
  const PatchDataset test1 = select_features(test2, {"VH"});
  const NormStats stats1 = effective_stats(train1);
  const NormStats stats2 = effective_stats(train2);

  const CheckpointBundle expanded = expand_input_channels(sm.pretrained, {"VH", "VV"});

  double one_sum = 0, two_sum = 0;
  for (const std::uint64_t seed : {1, 2, 3}) {
    const double one = finetune_arm(FinetuneMode::parse("ft_e"), seed, train1, test1,
                                    stats1, 3e-4, 2, sm.pretrained);
    const double two = finetune_arm(FinetuneMode::parse("ft_e"), seed, train2, test2,
                                    stats2, 3e-4, 2, expanded);
    info("seed " + std::to_string(seed) + ": 1-channel " + std::to_string(one) +
         "  2-channel " + std::to_string(two));
    one_sum += one;
    two_sum += two;
  }
  info("means: 1-channel " + std::to_string(one_sum / 3) + "  2-channel " +
       std::to_string(two_sum / 3));
  require(two_sum / 3 >= one_sum / 3,
          "2-channel FT_E mean IoU " + std::to_string(two_sum / 3) +
              " below the 1-channel mean " + std::to_string(one_sum / 3));
}

// ---------------------------------------------------------------------------

struct Criterion {
  int id;
  const char* label;
  std::function<void()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "channel-expansion identity on 20 random desk-scale models", criterion_1},
      {2, "freeze soundness over 50 fine-tune steps (FT_E, FT_D)", criterion_2},
      {3, "double-precision gradient check on the tiny config", criterion_3},
      {4, "early-prediction identity and zero-padding law", criterion_4},
      {5, "curriculum schedule property over 200 random draws", criterion_5},
      {6, "metric oracle on 1000 mask pairs + micro-average law", criterion_6},
      {7, "transfer benefit: FT_E >= RI + 0.05 and FT >= RI over 3 seeds", criterion_7},
      {8, "two-variant diagnostic: TP curve closer to the source signature", criterion_8},
      {9, "bitwise round-trips; corruption names the offending entry", criterion_9},
      {10, "adapted 2-channel FT_E >= 1-channel FT_E over 3 seeds", criterion_10},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    g_info.clear();
    const auto start = std::chrono::steady_clock::now();
    std::string failure;
    try {
      c.run();
    } catch (const Failure& f) {
      failure = f.reason;
    } catch (const std::exception& e) {
      failure = std::string("unexpected exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (failure.empty()) {
      std::printf("PASS criterion %2d: %s (%.1fs)\n", c.id, c.label, secs);
    } else {
      std::printf("FAIL criterion %2d: %s (%.1fs) — %s\n", c.id, c.label, secs,
                  failure.c_str());
      ++failures;
    }
    for (const auto& line : g_info) std::printf("      %s\n", line.c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
