#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cropseg/data.hpp"
#include "cropseg/model.hpp"
#include "cropseg/serialize.hpp"
#include "cropseg/transfer.hpp"

// Curriculum trainer: each epoch walks phases of growing season length
// (t_avail = 1..T); within a phase every sample appears exactly once in
// seed-shuffled order, zero-padded beyond t_avail. Weighted BCE loss, Adam,
// global-norm gradient clipping, TrainableMask honored bitwise.

namespace cropseg {

struct TrainConfig {
  Index epochs = 1;
  Index batch_size = 4;
  double learning_rate = 1e-3;  // pretrain default; fine-tuning runs use 1e-4
  double pos_weight = 1.0;
  std::uint64_t seed = 0;
  bool curriculum = true;
  std::vector<Index> early_step_set;  // curriculum phases; empty = all of 1..T

  void validate(Index t) const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(pos_weight >= 0.0)) throw ConfigError("pos_weight must be >= 0");
    for (Index p : early_step_set)
      if (p < 1 || p > t) throw ConfigError("early_step_set entries must lie in [1, T]");
  }

  std::vector<Index> phases(Index t) const {
    std::vector<Index> out;
    if (!curriculum) return {t};
    if (early_step_set.empty()) {
      for (Index p = 1; p <= t; ++p) out.push_back(p);
      return out;
    }
    out = early_step_set;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }
};

struct BatchPlan {
  std::vector<Index> samples;
  Index t_avail = 0;
};

struct StepRecord {
  Index epoch = 0;
  Index t_avail = 0;
  Index batch = 0;
  double loss = 0.0;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::uint64_t final_fingerprint = 0;

  void write_jsonl(const fs::path& path) const {
    std::string out;
    for (const auto& s : steps) {
      ojson j;
      j["epoch"] = s.epoch;
      j["t_avail"] = s.t_avail;
      j["batch"] = s.batch;
      j["loss"] = s.loss;
      out += j.dump();
      out += '\n';
    }
    ojson tail;
    tail["final_fingerprint"] = final_fingerprint;
    out += tail.dump();
    out += '\n';
    write_file_bytes(path, out.data(), out.size());
  }
};

namespace detail {

inline std::vector<BatchPlan> schedule_epoch(Index n_samples, Index batch_size,
                                             const std::vector<Index>& phases, Rng& rng) {
  std::vector<BatchPlan> plan;
  std::vector<Index> order(static_cast<size_t>(n_samples));
  for (const Index t_avail : phases) {
    for (Index i = 0; i < n_samples; ++i) order[static_cast<size_t>(i)] = i;
    rng.shuffle(order);
    for (Index start = 0; start < n_samples; start += batch_size) {
      BatchPlan b;
      b.t_avail = t_avail;
      const Index end = std::min(start + batch_size, n_samples);
      b.samples.assign(order.begin() + start, order.begin() + end);
      plan.push_back(std::move(b));
    }
  }
  return plan;
}

}  // namespace detail

// One epoch's batch sequence: phases t_avail = 1..T in non-decreasing order,
// every sample exactly once per phase, seed-shuffled within a phase.
inline std::vector<BatchPlan> make_curriculum_schedule(Index n_samples, Index batch_size, Index t,
                                                       std::uint64_t seed) {
  if (n_samples < 1) throw ConfigError("schedule needs n_samples >= 1");
  if (batch_size < 1) throw ConfigError("schedule needs batch_size >= 1");
  if (t < 1) throw ConfigError("schedule needs T >= 1");
  std::vector<Index> phases;
  for (Index p = 1; p <= t; ++p) phases.push_back(p);
  Rng rng(seed ^ 0xc2b2ae3d27d4eb4fULL);
  return detail::schedule_epoch(n_samples, batch_size, phases, rng);
}

// Weighted binary cross-entropy over probability maps (clamped at 1e-7).
template <typename Scalar>
double loss(const Tensor<Scalar>& probs, const Tensor<std::uint8_t>& labels, double pos_weight) {
  if (probs.shape() != labels.shape()) throw ConfigError("loss: probs/labels shape mismatch");
  if (probs.size() == 0) throw ConfigError("loss: empty input");
  constexpr double eps = 1e-7;
  double acc = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(static_cast<double>(probs.flat()[i]), eps, 1.0 - eps);
    acc -= labels.flat()[i] ? pos_weight * std::log(p) : std::log1p(-p);
  }
  return acc / static_cast<double>(probs.size());
}

namespace detail {

inline double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

// Same loss evaluated from logits (numerically stable; used by the trainer
// and the finite-difference gradient check).
template <typename Scalar>
double loss_from_logits(const Tensor<Scalar>& logits, const std::uint8_t* labels,
                        double pos_weight) {
  double acc = 0.0;
  for (Index i = 0; i < logits.size(); ++i) {
    const double z = static_cast<double>(logits.flat()[i]);
    acc += labels[i] ? pos_weight * softplus(-z) : softplus(z);
  }
  return acc;
}

// dLoss/dlogit for the mean-over-`denom`-pixels weighted BCE.
template <typename Scalar>
void loss_grad_logits(const Tensor<Scalar>& logits, const std::uint8_t* labels, double pos_weight,
                      double denom, Tensor<Scalar>& dlogits) {
  if (dlogits.shape() != logits.shape()) dlogits = Tensor<Scalar>(logits.shape());
  for (Index i = 0; i < logits.size(); ++i) {
    const double p = static_cast<double>(nn::sigmoid(logits.flat()[i]));
    const double g = labels[i] ? -pos_weight * (1.0 - p) : p;
    dlogits.flat()[i] = static_cast<Scalar>(g / denom);
  }
}

}  // namespace detail

// Normalized input for one sample, zero-padded beyond t_avail.
inline Tensor<float> normalized_input(const PatchSample& sample, const NormStats& stats,
                                      Index t_avail) {
  Tensor<float> x = normalize(sample.x, stats);
  const Index t = x.dim(0), n = x.size() / t;
  for (Index ti = t_avail; ti < t; ++ti)
    std::memset(x.data() + ti * n, 0, sizeof(float) * static_cast<size_t>(n));
  return x;
}

// Stats actually used for a dataset: persisted ones when present, otherwise
// fitted on the dataset's own samples (callers fit on the training split).
inline NormStats effective_stats(const PatchDataset& dataset) {
  if (dataset.norm_stats) return *dataset.norm_stats;
  return fit_normalization(dataset.samples);
}

struct TrainResult {
  ParameterSet<float> params;
  TrainHistory history;
};

inline TrainResult train(const ParameterSet<float>& initial, const TrainableMask& mask,
                         const PatchDataset& dataset, const TrainConfig& cfg) {
  const ModelConfig& mc = initial.config;
  cfg.validate(mc.time_steps);
  if (dataset.samples.empty()) throw ConfigError("train: empty dataset");
  dataset.validate();
  if (dataset.time_steps != mc.time_steps || dataset.channels != mc.in_channels ||
      dataset.height != mc.patch_size || dataset.width != mc.patch_size)
    throw ConfigError("train: dataset shape does not match model config");
  for (const auto& spec : initial.specs)
    if (!mask.contains(spec.path)) throw ConfigError("mask missing parameter: " + spec.path);

  const NormStats stats = effective_stats(dataset);
  const Index n = static_cast<Index>(dataset.samples.size());
  const std::vector<Index> phases = cfg.phases(mc.time_steps);

  ParameterSet<float> params = initial;
  ParameterSet<float> grads = ParameterSet<float>::shaped(mc);
  ParameterSet<float> m = ParameterSet<float>::shaped(mc);
  ParameterSet<float> v = ParameterSet<float>::shaped(mc);
  std::vector<char> trainable(params.specs.size());
  for (size_t i = 0; i < params.specs.size(); ++i)
    trainable[i] = mask.at(params.specs[i].path) ? 1 : 0;

  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8, clip_norm = 5.0;
  Rng schedule_rng(cfg.seed ^ 0xa0761d6478bd642fULL);
  Rng dropout_rng(cfg.seed ^ 0xe7037ed1a0b428dbULL);

  TrainHistory history;
  SampleTrace<float> tr;
  Tensor<float> dlogits;
  const Index hp = mc.patch_size;
  long adam_t = 0;

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto plan = detail::schedule_epoch(n, cfg.batch_size, phases, schedule_rng);
    Index batch_in_epoch = 0;
    for (const auto& batch : plan) {
      for (auto& g : grads.values) g.set_zero();
      double batch_loss = 0.0;
      const double denom =
          static_cast<double>(batch.samples.size()) * static_cast<double>(hp * hp);
      for (const Index si : batch.samples) {
        const PatchSample& sample = dataset.samples[static_cast<size_t>(si)];
        const Tensor<float> x = normalized_input(sample, stats, batch.t_avail);
        forward_sample(params, x.data(), tr, &dropout_rng);
        batch_loss +=
            detail::loss_from_logits(tr.logits, sample.y.data(), cfg.pos_weight) / denom;
        detail::loss_grad_logits(tr.logits, sample.y.data(), cfg.pos_weight, denom, dlogits);
        backward_sample(params, tr, dlogits, grads);
      }

      const Index step = static_cast<Index>(history.steps.size());
      if (!std::isfinite(batch_loss))
        throw DivergenceError(step, "non-finite loss at epoch " + std::to_string(epoch));

      // Global-norm clipping over the trainable gradients only.
      double sq = 0.0;
      for (size_t i = 0; i < grads.values.size(); ++i)
        if (trainable[i]) sq += grads.values[i].flat().cast<double>().square().sum();
      const double gnorm = std::sqrt(sq);
      const float scale = gnorm > clip_norm ? static_cast<float>(clip_norm / gnorm) : 1.0f;

      ++adam_t;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t));
      for (size_t i = 0; i < params.values.size(); ++i) {
        if (!trainable[i]) continue;
        auto& g = grads.values[i].flat();
        if (scale != 1.0f) g *= scale;
        auto& mi = m.values[i].flat();
        auto& vi = v.values[i].flat();
        mi = static_cast<float>(beta1) * mi + static_cast<float>(1.0 - beta1) * g;
        vi = static_cast<float>(beta2) * vi + static_cast<float>(1.0 - beta2) * g.square();
        params.values[i].flat() -=
            static_cast<float>(cfg.learning_rate) *
            (mi / static_cast<float>(bc1)) /
            ((vi / static_cast<float>(bc2)).sqrt() + static_cast<float>(adam_eps));
      }

      history.steps.push_back(StepRecord{epoch, batch.t_avail, batch_in_epoch, batch_loss});
      ++batch_in_epoch;
    }
  }

  history.final_fingerprint = params.fingerprint();
  return TrainResult{std::move(params), std::move(history)};
}

}  // namespace cropseg
