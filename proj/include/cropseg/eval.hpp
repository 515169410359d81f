#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cropseg/data.hpp"
#include "cropseg/model.hpp"
#include "cropseg/train.hpp"

// Segmentation metrics (positive class), micro-averaged over all test pixels,
// plus the TP/FN mean-time-series diagnostic used to explain transfer misses.

namespace cropseg {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  std::uint64_t total() const { return tp + fp + fn + tn; }
};

inline ConfusionCounts confusion_counts(const Tensor<std::uint8_t>& pred,
                                        const Tensor<std::uint8_t>& label) {
  if (pred.shape() != label.shape()) throw ConfigError("confusion: pred/label shape mismatch");
  ConfusionCounts c;
  for (Index i = 0; i < pred.size(); ++i) {
    const std::uint8_t p = pred.flat()[i], y = label.flat()[i];
    if (p > 1 || y > 1) throw ConfigError("confusion: masks must be binary");
    if (p && y)
      ++c.tp;
    else if (p && !y)
      ++c.fp;
    else if (!p && y)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

struct Metrics {
  double iou = 0, recall = 0, precision = 0, f1 = 0;
};

// 0/0 ratios resolve to 0 by convention.
inline Metrics compute_metrics(const ConfusionCounts& c) {
  auto ratio = [](std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  Metrics m;
  m.iou = ratio(c.tp, c.tp + c.fp + c.fn);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.f1 = (m.precision + m.recall) == 0.0
             ? 0.0
             : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

inline ojson metrics_to_json(const Metrics& m) {
  ojson j;
  j["iou"] = m.iou;
  j["recall"] = m.recall;
  j["precision"] = m.precision;
  j["f1"] = m.f1;
  return j;
}

// Network predictions for a whole dataset: per-patch probability maps
// thresholded into masks. `t_avail` < T zero-pads the tail (early prediction).
inline std::vector<Tensor<std::uint8_t>> predict_masks(const ParameterSet<float>& params,
                                                       const PatchDataset& dataset,
                                                       const NormStats& stats, double threshold,
                                                       Index t_avail = -1) {
  const ModelConfig& mc = params.config;
  if (dataset.channels != mc.in_channels)
    throw ConfigError("predict: dataset features do not match model input channels");
  if (dataset.time_steps != mc.time_steps || dataset.height != mc.patch_size ||
      dataset.width != mc.patch_size)
    throw ConfigError("predict: dataset shape does not match model config");
  if (t_avail < 0) t_avail = mc.time_steps;
  if (t_avail < 1 || t_avail > mc.time_steps) throw ConfigError("predict: t_avail out of range");

  std::vector<Tensor<std::uint8_t>> masks;
  SampleTrace<float> tr;
  const Index hp = mc.patch_size;
  for (const auto& sample : dataset.samples) {
    const Tensor<float> x = normalized_input(sample, stats, t_avail);
    forward_sample(params, x.data(), tr);
    Tensor<std::uint8_t> mask({hp, hp});
    for (Index i = 0; i < hp * hp; ++i)
      mask.flat()[i] =
          static_cast<double>(nn::sigmoid(tr.logits.flat()[i])) >= threshold ? 1 : 0;
    masks.push_back(std::move(mask));
  }
  return masks;
}

// Micro-average: sum confusion counts over all patches, then compute metrics
// once on the aggregate.
inline std::pair<ConfusionCounts, Metrics> evaluate_masks(
    const std::vector<Tensor<std::uint8_t>>& preds, const PatchDataset& test) {
  if (test.samples.empty()) throw ConfigError("evaluate: empty test set");
  if (preds.size() != test.samples.size())
    throw ConfigError("evaluate: prediction count does not match test set");
  ConfusionCounts agg;
  for (size_t i = 0; i < preds.size(); ++i) agg += confusion_counts(preds[i], test.samples[i].y);
  return {agg, compute_metrics(agg)};
}

// Patch-mean alternative (macro over patches); exposed for sensitivity checks.
inline Metrics evaluate_masks_patch_mean(const std::vector<Tensor<std::uint8_t>>& preds,
                                         const PatchDataset& test) {
  if (test.samples.empty()) throw ConfigError("evaluate: empty test set");
  if (preds.size() != test.samples.size())
    throw ConfigError("evaluate: prediction count does not match test set");
  Metrics mean;
  for (size_t i = 0; i < preds.size(); ++i) {
    const Metrics m = compute_metrics(confusion_counts(preds[i], test.samples[i].y));
    mean.iou += m.iou;
    mean.recall += m.recall;
    mean.precision += m.precision;
    mean.f1 += m.f1;
  }
  const double n = static_cast<double>(preds.size());
  mean.iou /= n;
  mean.recall /= n;
  mean.precision /= n;
  mean.f1 /= n;
  return mean;
}

struct MeanSeries {
  std::vector<double> tp, fn;  // length T; meaningful only when the flag is set
  bool tp_present = false, fn_present = false;
};

// Mean raw time-series of one feature over TP pixels and FN pixels across the
// whole dataset: shows which phenology a model recovers and which it misses.
// Empty pixel sets leave the curve flagged absent.
inline MeanSeries tp_fn_mean_series(const std::vector<Tensor<std::uint8_t>>& preds,
                                    const PatchDataset& dataset, Index feature) {
  if (preds.size() != dataset.samples.size())
    throw ConfigError("tp_fn_mean_series: prediction count does not match dataset");
  if (feature < 0 || feature >= dataset.channels)
    throw ConfigError("tp_fn_mean_series: feature index out of range");
  const Index t = dataset.time_steps, c = dataset.channels;
  const Index hw = dataset.height * dataset.width;

  MeanSeries out;
  out.tp.assign(static_cast<size_t>(t), 0.0);
  out.fn.assign(static_cast<size_t>(t), 0.0);
  std::uint64_t n_tp = 0, n_fn = 0;
  for (size_t si = 0; si < dataset.samples.size(); ++si) {
    const auto& sample = dataset.samples[si];
    const auto& pred = preds[si];
    if (pred.shape() != sample.y.shape())
      throw ConfigError("tp_fn_mean_series: mask shape mismatch");
    for (Index pix = 0; pix < hw; ++pix) {
      const bool y = sample.y.flat()[pix] != 0;
      if (!y) continue;
      const bool p = pred.flat()[pix] != 0;
      auto& acc = p ? out.tp : out.fn;
      for (Index ti = 0; ti < t; ++ti)
        acc[static_cast<size_t>(ti)] +=
            static_cast<double>(sample.x.data()[(ti * c + feature) * hw + pix]);
      (p ? n_tp : n_fn) += 1;
    }
  }
  if (n_tp > 0) {
    for (auto& v : out.tp) v /= static_cast<double>(n_tp);
    out.tp_present = true;
  } else {
    out.tp.clear();
  }
  if (n_fn > 0) {
    for (auto& v : out.fn) v /= static_cast<double>(n_fn);
    out.fn_present = true;
  } else {
    out.fn.clear();
  }
  return out;
}

inline double l2_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ConfigError("l2_distance: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

// Mean raw series of one feature over all labeled-positive pixels (the
// "rice signature" of a region).
inline std::vector<double> positive_mean_series(const PatchDataset& dataset, Index feature) {
  if (feature < 0 || feature >= dataset.channels)
    throw ConfigError("positive_mean_series: feature index out of range");
  const Index t = dataset.time_steps, c = dataset.channels;
  const Index hw = dataset.height * dataset.width;
  std::vector<double> acc(static_cast<size_t>(t), 0.0);
  std::uint64_t n = 0;
  for (const auto& sample : dataset.samples) {
    for (Index pix = 0; pix < hw; ++pix) {
      if (!sample.y.flat()[pix]) continue;
      for (Index ti = 0; ti < t; ++ti)
        acc[static_cast<size_t>(ti)] +=
            static_cast<double>(sample.x.data()[(ti * c + feature) * hw + pix]);
      ++n;
    }
  }
  if (n == 0) throw DataError("positive_mean_series: no positive pixels");
  for (auto& v : acc) v /= static_cast<double>(n);
  return acc;
}

}  // namespace cropseg
