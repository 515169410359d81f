#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "cropseg/data.hpp"
#include "cropseg/train.hpp"

// Locally trained random-forest baseline: a pixel-wise classifier on the
// flattened (T·C) normalized time-series. Hand-rolled gini CART with
// histogram split finding (values live in [0,1] after normalization) so runs
// are deterministic for a fixed seed across platforms.

namespace cropseg {

struct RFConfig {
  Index n_trees = 100;
  Index max_depth = 0;  // 0 = unlimited
  Index min_leaf = 1;
  Index pixel_cap = 200000;  // training pixels subsampled to this count

  void validate() const {
    if (n_trees < 1) throw ConfigError("rf: n_trees must be >= 1");
    if (max_depth < 0 || min_leaf < 1 || pixel_cap < 1) throw ConfigError("rf: bad config");
  }
};

struct RFNode {
  int feature = -1;  // -1 = leaf
  float threshold = 0.0f;
  int left = -1, right = -1;
  float prob = 0.0f;  // leaf: positive-class fraction
};

struct RFModel {
  RFConfig cfg;
  Index n_features = 0;
  NormStats stats;  // fitted on the training split; reused at prediction
  std::vector<std::vector<RFNode>> trees;
  bool degenerate = false;  // single-class training labels
  float constant = 0.0f;
};

namespace detail {

constexpr int kRfBins = 64;

// Values are pre-normalized to [0,1]; thresholds sit on bin edges (k/64),
// which are exact in binary floating point, so `x < threshold` routing is
// identical between split finding and prediction.
inline std::vector<RFNode> rf_build_tree(const std::vector<float>& x,
                                         const std::vector<std::uint8_t>& y, Index f, Index mtry,
                                         const RFConfig& cfg, std::vector<Index> idx, Rng rng) {
  std::vector<RFNode> nodes;
  std::vector<Index> feature_pool(static_cast<size_t>(f));

  struct Job {
    Index lo, hi, depth;
    int parent;     // node to patch, -1 for root
    bool is_left;
  };
  std::vector<Job> stack{{0, static_cast<Index>(idx.size()), 0, -1, false}};

  while (!stack.empty()) {
    const Job job = stack.back();
    stack.pop_back();
    const Index n = job.hi - job.lo;
    Index pos = 0;
    for (Index i = job.lo; i < job.hi; ++i)
      pos += y[static_cast<size_t>(idx[static_cast<size_t>(i)])];

    const int me = static_cast<int>(nodes.size());
    nodes.push_back(RFNode{});
    nodes.back().prob = static_cast<float>(static_cast<double>(pos) / static_cast<double>(n));
    if (job.parent >= 0) {
      auto& p = nodes[static_cast<size_t>(job.parent)];
      (job.is_left ? p.left : p.right) = me;
    }
    if (pos == 0 || pos == n || n < 2 * cfg.min_leaf ||
        (cfg.max_depth > 0 && job.depth >= cfg.max_depth))
      continue;

    // Random feature subset: first mtry entries of a partial shuffle.
    for (Index i = 0; i < f; ++i) feature_pool[static_cast<size_t>(i)] = i;
    for (Index i = 0; i < mtry; ++i) {
      const Index j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(f - i)));
      std::swap(feature_pool[static_cast<size_t>(i)], feature_pool[static_cast<size_t>(j)]);
    }

    int best_feature = -1, best_bin = -1;
    double best_score = std::numeric_limits<double>::infinity();
    Index posb[kRfBins], allb[kRfBins];
    for (Index fi = 0; fi < mtry; ++fi) {
      const Index feat = feature_pool[static_cast<size_t>(fi)];
      std::fill(posb, posb + kRfBins, Index(0));
      std::fill(allb, allb + kRfBins, Index(0));
      for (Index i = job.lo; i < job.hi; ++i) {
        const Index p = idx[static_cast<size_t>(i)];
        const float v = x[static_cast<size_t>(p * f + feat)];
        const int b = std::min(kRfBins - 1, static_cast<int>(v * kRfBins));
        ++allb[b];
        posb[b] += y[static_cast<size_t>(p)];
      }
      Index nl = 0, pl = 0;
      for (int b = 0; b < kRfBins - 1; ++b) {
        nl += allb[b];
        pl += posb[b];
        const Index nr = n - nl, pr = pos - pl;
        if (nl < cfg.min_leaf || nr < cfg.min_leaf || nl == 0 || nr == 0) continue;
        // Split score: child-size-weighted gini impurity (lower is better).
        const double l1 = static_cast<double>(pl) / static_cast<double>(nl);
        const double r1 = static_cast<double>(pr) / static_cast<double>(nr);
        const double score = static_cast<double>(nl) * 2.0 * l1 * (1.0 - l1) +
                             static_cast<double>(nr) * 2.0 * r1 * (1.0 - r1);
        if (score < best_score) {
          best_score = score;
          best_feature = static_cast<int>(feat);
          best_bin = b;
        }
      }
    }
    if (best_feature < 0) continue;

    const float thr = static_cast<float>(best_bin + 1) / static_cast<float>(kRfBins);
    auto mid_it = std::partition(idx.begin() + job.lo, idx.begin() + job.hi, [&](Index p) {
      return x[static_cast<size_t>(p * f + best_feature)] < thr;
    });
    const Index mid = static_cast<Index>(mid_it - idx.begin());
    if (mid == job.lo || mid == job.hi) continue;  // numeric edge: keep as leaf

    nodes[static_cast<size_t>(me)].feature = best_feature;
    nodes[static_cast<size_t>(me)].threshold = thr;
    // Right pushed first so the left child is processed (and numbered) first.
    stack.push_back(Job{mid, job.hi, job.depth + 1, me, false});
    stack.push_back(Job{job.lo, mid, job.depth + 1, me, true});
  }
  return nodes;
}

}  // namespace detail

inline RFModel rf_train(const PatchDataset& dataset, const RFConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (dataset.samples.empty()) throw ConfigError("rf_train: empty dataset");
  dataset.validate();

  RFModel model;
  model.cfg = cfg;
  model.n_features = dataset.time_steps * dataset.channels;
  model.stats = effective_stats(dataset);

  const Index t = dataset.time_steps, c = dataset.channels;
  const Index hw = dataset.height * dataset.width;
  const Index total = static_cast<Index>(dataset.samples.size()) * hw;

  Rng rng(seed ^ 0x2545f4914f6cdd1dULL);
  std::vector<Index> chosen(static_cast<size_t>(total));
  for (Index i = 0; i < total; ++i) chosen[static_cast<size_t>(i)] = i;
  if (total > cfg.pixel_cap) {
    rng.shuffle(chosen);
    chosen.resize(static_cast<size_t>(cfg.pixel_cap));
    std::sort(chosen.begin(), chosen.end());
  }
  const Index n = static_cast<Index>(chosen.size());
  const Index f = model.n_features;

  // Gather the normalized per-pixel series matrix once.
  std::vector<float> xmat(static_cast<size_t>(n * f));
  std::vector<std::uint8_t> ymat(static_cast<size_t>(n));
  Index row = 0;
  size_t cursor = 0;
  for (size_t si = 0; si < dataset.samples.size() && cursor < chosen.size(); ++si) {
    const Tensor<float> xn = normalize(dataset.samples[si].x, model.stats);
    const auto& yy = dataset.samples[si].y;
    const Index base = static_cast<Index>(si) * hw;
    while (cursor < chosen.size() && chosen[cursor] < base + hw) {
      const Index pix = chosen[cursor] - base;
      for (Index ti = 0; ti < t; ++ti)
        for (Index ci = 0; ci < c; ++ci)
          xmat[static_cast<size_t>(row * f + ti * c + ci)] = xn.data()[(ti * c + ci) * hw + pix];
      ymat[static_cast<size_t>(row)] = yy.flat()[pix];
      ++row;
      ++cursor;
    }
  }

  Index pos = 0;
  for (Index i = 0; i < n; ++i) pos += ymat[static_cast<size_t>(i)];
  if (pos == 0 || pos == n) {
    model.degenerate = true;
    model.constant = pos == 0 ? 0.0f : 1.0f;
    return model;
  }

  const Index mtry =
      std::max<Index>(1, static_cast<Index>(std::floor(std::sqrt(static_cast<double>(f)))));
  model.trees.reserve(static_cast<size_t>(cfg.n_trees));
  for (Index ti = 0; ti < cfg.n_trees; ++ti) {
    Rng tree_rng(rng.fork());
    std::vector<Index> boot(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i)
      boot[static_cast<size_t>(i)] =
          static_cast<Index>(tree_rng.below(static_cast<std::uint64_t>(n)));
    model.trees.push_back(
        detail::rf_build_tree(xmat, ymat, f, mtry, cfg, std::move(boot), tree_rng));
  }
  return model;
}

// Per-patch binary masks; pixel probability = mean leaf probability over trees.
inline std::vector<Tensor<std::uint8_t>> rf_predict(const RFModel& model,
                                                    const PatchDataset& dataset,
                                                    double threshold = 0.5) {
  dataset.validate();
  if (dataset.time_steps * dataset.channels != model.n_features)
    throw ConfigError("rf_predict: feature count mismatch");
  const Index t = dataset.time_steps, c = dataset.channels;
  const Index hw = dataset.height * dataset.width;
  const Index f = model.n_features;

  std::vector<Tensor<std::uint8_t>> masks;
  std::vector<float> feat(static_cast<size_t>(f));
  for (const auto& sample : dataset.samples) {
    const Tensor<float> xn = normalize(sample.x, model.stats);
    Tensor<std::uint8_t> mask({dataset.height, dataset.width});
    for (Index pix = 0; pix < hw; ++pix) {
      for (Index ti = 0; ti < t; ++ti)
        for (Index ci = 0; ci < c; ++ci)
          feat[static_cast<size_t>(ti * c + ci)] = xn.data()[(ti * c + ci) * hw + pix];
      double acc = 0.0;
      if (model.degenerate) {
        acc = model.constant;
      } else {
        for (const auto& tree : model.trees) {
          int ni = 0;
          while (tree[static_cast<size_t>(ni)].feature >= 0) {
            const auto& nd = tree[static_cast<size_t>(ni)];
            ni = feat[static_cast<size_t>(nd.feature)] < nd.threshold ? nd.left : nd.right;
          }
          acc += tree[static_cast<size_t>(ni)].prob;
        }
        acc /= static_cast<double>(model.trees.size());
      }
      mask.flat()[pix] = acc >= threshold ? 1 : 0;
    }
    masks.push_back(std::move(mask));
  }
  return masks;
}

}  // namespace cropseg
