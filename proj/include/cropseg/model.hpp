#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cropseg/errors.hpp"
#include "cropseg/nn.hpp"
#include "cropseg/tensor.hpp"

// Recurrent U-Net for time-series segmentation. The encoder runs two shared
// 3x3 convs per time step at each level with a per-channel recurrent carry
// (h_t = relu(conv(x_t) + a * h_{t-1})); skip features are max-pooled on the
// time axis, flattened into channels, and consumed by a purely spatial 2D
// decoder with 2x2 transposed-conv upsampling and a logistic 1x1 head.

namespace cropseg {

struct ModelConfig {
  Index in_channels = 1;
  Index time_steps = 8;
  Index depth = 4;  // skip-producing encoder levels; one bottleneck level sits below them
  Index base_channels = 32;
  double dropout_rate = 0.2;
  Index temporal_pool_window = 2;
  std::string hidden_activation = "relu";
  std::string output_activation = "sigmoid";
  Index patch_size = 256;

  void validate() const {
    if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
    if (time_steps < 1) throw ConfigError("time_steps must be >= 1");
    if (depth < 1) throw ConfigError("depth must be >= 1");
    if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw ConfigError("dropout_rate must be in [0, 1)");
    if (temporal_pool_window < 1) throw ConfigError("temporal_pool_window must be >= 1");
    if (time_steps % temporal_pool_window != 0)
      throw ConfigError("time_steps (" + std::to_string(time_steps) +
                        ") not divisible by temporal_pool_window (" +
                        std::to_string(temporal_pool_window) + ")");
    const Index stride = Index(1) << depth;
    if (patch_size % stride != 0)
      throw ConfigError("patch_size (" + std::to_string(patch_size) +
                        ") not divisible by 2^depth (" + std::to_string(stride) + ")");
    if (hidden_activation != "relu") throw ConfigError("unsupported hidden activation");
    if (output_activation != "sigmoid") throw ConfigError("unsupported output activation");
  }

  Index pooled_steps() const { return time_steps / temporal_pool_window; }
  Index encoder_levels() const { return depth + 1; }  // includes the bottleneck level
  Index encoder_out_channels(Index level) const { return base_channels << level; }
  Index encoder_in_channels(Index level) const {
    return level == 0 ? in_channels : (base_channels << (level - 1));
  }
  Index decoder_block_count() const { return depth + 1; }  // up blocks + output head

  bool operator==(const ModelConfig&) const = default;

  // Full-size configuration used for real patches.
  static ModelConfig full_scale() { return ModelConfig{}; }

  // Reduced configuration for laptop-scale runs and tests.
  static ModelConfig desk_scale() {
    ModelConfig c;
    c.base_channels = 8;
    c.depth = 2;
    c.patch_size = 64;
    return c;
  }
};

enum class ParamGroup { encoder, decoder };

struct ParamSpec {
  std::string path;
  std::vector<Index> shape;
  ParamGroup group = ParamGroup::encoder;
  Index block = 0;  // encoder level, or decoder block index (head = depth)
};

inline std::vector<ParamSpec> parameter_specs(const ModelConfig& c) {
  c.validate();
  std::vector<ParamSpec> specs;
  const Index tp = c.pooled_steps();
  for (Index l = 0; l <= c.depth; ++l) {
    const Index cin = c.encoder_in_channels(l);
    const Index cout = c.encoder_out_channels(l);
    const std::string p = "encoder." + std::to_string(l) + ".";
    specs.push_back({p + "conv1.weight", {cout, cin, 3, 3}, ParamGroup::encoder, l});
    specs.push_back({p + "conv1.bias", {cout}, ParamGroup::encoder, l});
    specs.push_back({p + "conv2.weight", {cout, cout, 3, 3}, ParamGroup::encoder, l});
    specs.push_back({p + "conv2.bias", {cout}, ParamGroup::encoder, l});
    specs.push_back({p + "carry", {cout}, ParamGroup::encoder, l});
  }
  for (Index j = 0; j < c.depth; ++j) {
    const Index level = c.depth - 1 - j;
    const Index up_in = (j == 0) ? c.encoder_out_channels(c.depth) * tp
                                 : c.encoder_out_channels(level + 1);
    const Index ch = c.encoder_out_channels(level);
    const Index cat = ch * (1 + tp);
    const std::string p = "decoder." + std::to_string(j) + ".";
    specs.push_back({p + "up.weight", {up_in, ch, 2, 2}, ParamGroup::decoder, j});
    specs.push_back({p + "up.bias", {ch}, ParamGroup::decoder, j});
    specs.push_back({p + "conv1.weight", {ch, cat, 3, 3}, ParamGroup::decoder, j});
    specs.push_back({p + "conv1.bias", {ch}, ParamGroup::decoder, j});
    specs.push_back({p + "conv2.weight", {ch, ch, 3, 3}, ParamGroup::decoder, j});
    specs.push_back({p + "conv2.bias", {ch}, ParamGroup::decoder, j});
  }
  specs.push_back({"decoder.head.weight", {1, c.base_channels, 1, 1}, ParamGroup::decoder, c.depth});
  specs.push_back({"decoder.head.bias", {1}, ParamGroup::decoder, c.depth});
  return specs;
}

// Named parameter tensors in canonical (serialization) order.
template <typename Scalar>
struct ParameterSet {
  ModelConfig config;
  std::vector<ParamSpec> specs;
  std::vector<Tensor<Scalar>> values;

  static ParameterSet shaped(const ModelConfig& c) {
    ParameterSet ps;
    ps.config = c;
    ps.specs = parameter_specs(c);
    ps.values.reserve(ps.specs.size());
    for (const auto& s : ps.specs) ps.values.emplace_back(s.shape);
    ps.rebuild_index();
    return ps;
  }

  void rebuild_index() {
    by_path_.clear();
    for (size_t i = 0; i < specs.size(); ++i) by_path_[specs[i].path] = i;
  }

  size_t index_of(const std::string& path) const {
    auto it = by_path_.find(path);
    if (it == by_path_.end()) throw ConfigError("unknown parameter path: " + path);
    return it->second;
  }
  Tensor<Scalar>& value(const std::string& path) { return values[index_of(path)]; }
  const Tensor<Scalar>& value(const std::string& path) const { return values[index_of(path)]; }

  Index total_count() const {
    Index n = 0;
    for (const auto& v : values) n += v.size();
    return n;
  }

  bool bitwise_equal(const ParameterSet& other) const {
    if (!(config == other.config) || values.size() != other.values.size()) return false;
    for (size_t i = 0; i < values.size(); ++i)
      if (!values[i].bitwise_equal(other.values[i])) return false;
    return true;
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& v : values)
      h = fnv1a64(v.data(), sizeof(Scalar) * static_cast<size_t>(v.size()), h);
    return h;
  }

  template <typename To>
  ParameterSet<To> cast() const {
    ParameterSet<To> out;
    out.config = config;
    out.specs = specs;
    out.values.reserve(values.size());
    for (const auto& v : values) out.values.push_back(v.template cast<To>());
    out.rebuild_index();
    return out;
  }

 private:
  std::unordered_map<std::string, size_t> by_path_;
  template <typename T>
  friend struct ParameterSet;
};

// Deterministic initialization: conv kernels fan-in-scaled uniform, biases 0,
// recurrent carry weights 1 (identity-like carry at the start of training).
template <typename Scalar>
ParameterSet<Scalar> build_model(const ModelConfig& config, std::uint64_t seed) {
  auto ps = ParameterSet<Scalar>::shaped(config);
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x6a09e667f3bcc909ULL);
  for (size_t i = 0; i < ps.specs.size(); ++i) {
    const auto& spec = ps.specs[i];
    auto& t = ps.values[i];
    if (spec.path.ends_with(".carry")) {
      t.flat().setConstant(Scalar(1));
    } else if (spec.path.ends_with(".bias")) {
      t.set_zero();
    } else {
      // Weight shapes put the fan-in dims after the first axis, except the
      // transposed conv where the input channels come first.
      Index fan_in;
      if (spec.path.ends_with("up.weight")) {
        fan_in = spec.shape[0] * spec.shape[2] * spec.shape[3];
      } else {
        fan_in = spec.shape[1] * spec.shape[2] * spec.shape[3];
      }
      const double limit = std::sqrt(3.0 / static_cast<double>(fan_in));
      for (Index j = 0; j < t.size(); ++j)
        t.flat()[j] = static_cast<Scalar>(rng.uniform(-limit, limit));
    }
  }
  return ps;
}

// One batch of model input: values normalized to [0,1], zero beyond each
// sample's valid step count.
template <typename Scalar>
struct BatchTensor {
  Tensor<Scalar> x;  // [B, T, C, H, W]
  std::vector<Index> valid_steps;

  void validate() const {
    if (x.rank() != 5) throw ConfigError("batch tensor must be [B,T,C,H,W]");
    const Index b = x.dim(0), t = x.dim(1);
    if (static_cast<Index>(valid_steps.size()) != b)
      throw ConfigError("valid_steps size must match batch size");
    if (!x.flat().isFinite().all()) throw DataError("batch contains non-finite values");
    if ((x.flat() < Scalar(0)).any() || (x.flat() > Scalar(1)).any())
      throw DataError("batch values must lie in [0,1]");
    const Index chw = x.dim(2) * x.dim(3) * x.dim(4);
    for (Index i = 0; i < b; ++i) {
      const Index v = valid_steps[static_cast<size_t>(i)];
      if (v < 1 || v > t) throw ConfigError("valid_steps out of range");
      for (Index s = v; s < t; ++s) {
        const Scalar* p = x.data() + (i * t + s) * chw;
        for (Index j = 0; j < chw; ++j)
          if (p[j] != Scalar(0)) throw DataError("entries beyond valid_steps must be zero");
      }
    }
  }

  static BatchTensor checked(Tensor<Scalar> x, std::vector<Index> valid_steps) {
    BatchTensor b{std::move(x), std::move(valid_steps)};
    b.validate();
    return b;
  }
};

namespace detail {

template <typename Scalar>
struct EncoderLevelTrace {
  Tensor<Scalar> input;   // [T, Cin, H, W]
  Tensor<Scalar> u;       // post-relu conv1
  Tensor<Scalar> h;       // post-relu recurrent output (pre-dropout)
  Tensor<Scalar> hd;      // post-dropout output (== h when dropout inactive)
  Tensor<Scalar> mask;    // scaled dropout mask; empty when inactive
  Tensor<Scalar> pooled;  // temporal max pool of hd
  std::vector<std::uint8_t> tidx;
  std::vector<std::uint8_t> sidx;
  bool dropout = false;
};

template <typename Scalar>
struct DecoderBlockTrace {
  Tensor<Scalar> cat;  // [Cup*(1+Tp), H, W]; first Cup channels are the up-conv output
  Tensor<Scalar> c1;
  Tensor<Scalar> c2;
};

}  // namespace detail

template <typename Scalar>
struct SampleTrace {
  std::vector<detail::EncoderLevelTrace<Scalar>> enc;
  std::vector<detail::DecoderBlockTrace<Scalar>> dec;
  Tensor<Scalar> logits;  // [H, W]
  std::vector<Scalar> scratch_a, scratch_b;
};

// Forward pass for one sample. `x` points at [T, C, H, W]. When `dropout_rng`
// is non-null and config.dropout_rate > 0, training-mode dropout is applied
// after each encoder level with masks drawn from it.
template <typename Scalar>
void forward_sample(const ParameterSet<Scalar>& params, const Scalar* x, SampleTrace<Scalar>& tr,
                    Rng* dropout_rng = nullptr) {
  const ModelConfig& c = params.config;
  const Index T = c.time_steps, tp = c.pooled_steps(), win = c.temporal_pool_window;
  const bool drop = dropout_rng != nullptr && c.dropout_rate > 0.0;
  const Scalar keep = static_cast<Scalar>(1.0 - c.dropout_rate);

  tr.enc.resize(static_cast<size_t>(c.depth + 1));
  tr.dec.resize(static_cast<size_t>(c.depth));

  for (Index l = 0; l <= c.depth; ++l) {
    auto& lv = tr.enc[static_cast<size_t>(l)];
    const Index cin = c.encoder_in_channels(l), cout = c.encoder_out_channels(l);
    const Index hw = c.patch_size >> l;
    const Index in_n = cin * hw * hw, out_n = cout * hw * hw;

    if (lv.input.size() != T * in_n) lv.input = Tensor<Scalar>({T, cin, hw, hw});
    if (l == 0) std::memcpy(lv.input.data(), x, sizeof(Scalar) * static_cast<size_t>(T * in_n));
    if (lv.u.size() != T * out_n) lv.u = Tensor<Scalar>({T, cout, hw, hw});
    if (lv.h.size() != T * out_n) lv.h = Tensor<Scalar>({T, cout, hw, hw});

    const auto& w1 = params.value("encoder." + std::to_string(l) + ".conv1.weight");
    const auto& b1 = params.value("encoder." + std::to_string(l) + ".conv1.bias");
    const auto& w2 = params.value("encoder." + std::to_string(l) + ".conv2.weight");
    const auto& b2 = params.value("encoder." + std::to_string(l) + ".conv2.bias");
    const auto& a = params.value("encoder." + std::to_string(l) + ".carry");

    for (Index t = 0; t < T; ++t) {
      nn::conv2d_forward(lv.input.data() + t * in_n, cin, hw, hw, w1.data(), b1.data(), cout, 3,
                         lv.u.data() + t * out_n, tr.scratch_a);
      nn::relu_inplace(lv.u.data() + t * out_n, out_n);
      nn::conv2d_forward(lv.u.data() + t * out_n, cout, hw, hw, w2.data(), b2.data(), cout, 3,
                         lv.h.data() + t * out_n, tr.scratch_a);
    }
    // Recurrent carry: h_t = relu(v_t + a * h_{t-1}), h_{-1} = 0.
    const Index plane = hw * hw;
    for (Index t = 0; t < T; ++t) {
      Scalar* ht = lv.h.data() + t * out_n;
      if (t > 0) {
        const Scalar* hp = ht - out_n;
        for (Index ch = 0; ch < cout; ++ch) {
          const Scalar ac = a.data()[ch];
          Scalar* hc = ht + ch * plane;
          const Scalar* pc = hp + ch * plane;
          for (Index i = 0; i < plane; ++i) hc[i] += ac * pc[i];
        }
      }
      nn::relu_inplace(ht, out_n);
    }

    lv.dropout = drop;
    if (drop) {
      if (lv.mask.size() != T * out_n) lv.mask = Tensor<Scalar>({T, cout, hw, hw});
      if (lv.hd.size() != T * out_n) lv.hd = Tensor<Scalar>({T, cout, hw, hw});
      const Scalar inv = Scalar(1) / keep;
      for (Index i = 0; i < T * out_n; ++i) {
        const Scalar m = dropout_rng->uniform() < c.dropout_rate ? Scalar(0) : inv;
        lv.mask.flat()[i] = m;
        lv.hd.flat()[i] = lv.h.flat()[i] * m;
      }
    } else {
      lv.hd = lv.h;
    }

    if (lv.pooled.size() != tp * out_n) lv.pooled = Tensor<Scalar>({tp, cout, hw, hw});
    lv.tidx.resize(static_cast<size_t>(tp * out_n));
    nn::tmaxpool_forward(lv.hd.data(), T, out_n, win, lv.pooled.data(), lv.tidx.data());

    if (l < c.depth) {
      auto& next = tr.enc[static_cast<size_t>(l + 1)];
      const Index hw2 = hw / 2;
      if (next.input.size() != T * cout * hw2 * hw2)
        next.input = Tensor<Scalar>({T, cout, hw2, hw2});
      lv.sidx.resize(static_cast<size_t>(T * cout * hw2 * hw2));
      for (Index t = 0; t < T; ++t)
        nn::maxpool2_forward(lv.hd.data() + t * out_n, cout, hw, hw,
                             next.input.data() + t * cout * hw2 * hw2,
                             lv.sidx.data() + t * cout * hw2 * hw2);
    }
  }

  // Decoder: bottleneck pooled features are consumed with the time axis
  // flattened into channels; so is each skip.
  const Index tpc = tp;
  const Tensor<Scalar>* below = &tr.enc[static_cast<size_t>(c.depth)].pooled;
  Index below_ch = c.encoder_out_channels(c.depth) * tpc;
  for (Index j = 0; j < c.depth; ++j) {
    auto& bk = tr.dec[static_cast<size_t>(j)];
    const Index level = c.depth - 1 - j;
    const Index ch = c.encoder_out_channels(level);
    const Index hw = c.patch_size >> level;
    const Index cat_ch = ch * (1 + tpc);
    const std::string p = "decoder." + std::to_string(j) + ".";
    const auto& wu = params.value(p + "up.weight");
    const auto& bu = params.value(p + "up.bias");
    const auto& w1 = params.value(p + "conv1.weight");
    const auto& b1 = params.value(p + "conv1.bias");
    const auto& w2 = params.value(p + "conv2.weight");
    const auto& b2 = params.value(p + "conv2.bias");

    if (bk.cat.size() != cat_ch * hw * hw) bk.cat = Tensor<Scalar>({cat_ch, hw, hw});
    nn::deconv2_forward(below->data(), below_ch, hw / 2, hw / 2, wu.data(), bu.data(), ch,
                        bk.cat.data(), tr.scratch_a);
    const auto& skip = tr.enc[static_cast<size_t>(level)].pooled;  // [Tp, ch, hw, hw]
    std::memcpy(bk.cat.data() + ch * hw * hw, skip.data(),
                sizeof(Scalar) * static_cast<size_t>(skip.size()));

    if (bk.c1.size() != ch * hw * hw) bk.c1 = Tensor<Scalar>({ch, hw, hw});
    if (bk.c2.size() != ch * hw * hw) bk.c2 = Tensor<Scalar>({ch, hw, hw});
    nn::conv2d_forward(bk.cat.data(), cat_ch, hw, hw, w1.data(), b1.data(), ch, 3, bk.c1.data(),
                       tr.scratch_a);
    nn::relu_inplace(bk.c1.data(), bk.c1.size());
    nn::conv2d_forward(bk.c1.data(), ch, hw, hw, w2.data(), b2.data(), ch, 3, bk.c2.data(),
                       tr.scratch_a);
    nn::relu_inplace(bk.c2.data(), bk.c2.size());
    below = &bk.c2;
    below_ch = ch;
  }

  const Index hp = c.patch_size;
  if (tr.logits.size() != hp * hp) tr.logits = Tensor<Scalar>({hp, hp});
  const auto& whead = params.value("decoder.head.weight");
  const auto& bhead = params.value("decoder.head.bias");
  nn::conv2d_forward(tr.dec.back().c2.data(), c.base_channels, hp, hp, whead.data(),
                     bhead.data(), 1, 1, tr.logits.data(), tr.scratch_a);
}

// Backward pass for one sample; accumulates parameter gradients into `grads`
// (same specs as `params`). `dlogits` is dLoss/dlogits, [H, W].
template <typename Scalar>
void backward_sample(const ParameterSet<Scalar>& params, SampleTrace<Scalar>& tr,
                     const Tensor<Scalar>& dlogits, ParameterSet<Scalar>& grads) {
  const ModelConfig& c = params.config;
  const Index T = c.time_steps, tp = c.pooled_steps(), win = c.temporal_pool_window;
  const Index hp = c.patch_size;

  // Head.
  Tensor<Scalar> d_below({c.base_channels, hp, hp});
  {
    const auto& whead = params.value("decoder.head.weight");
    nn::conv2d_backward(tr.dec.back().c2.data(), c.base_channels, hp, hp, whead.data(), Index(1),
                        Index(1), dlogits.data(), grads.value("decoder.head.weight").data(),
                        grads.value("decoder.head.bias").data(), d_below.data(), tr.scratch_a,
                        tr.scratch_b);
  }

  // Per-level gradient of the temporally pooled skip output.
  std::vector<Tensor<Scalar>> d_pooled(static_cast<size_t>(c.depth + 1));

  for (Index j = c.depth - 1; j >= 0; --j) {
    auto& bk = tr.dec[static_cast<size_t>(j)];
    const Index level = c.depth - 1 - j;
    const Index ch = c.encoder_out_channels(level);
    const Index hw = c.patch_size >> level;
    const Index cat_ch = ch * (1 + tp);
    const Index below_ch =
        (j == 0) ? c.encoder_out_channels(c.depth) * tp : c.encoder_out_channels(level + 1);
    const std::string p = "decoder." + std::to_string(j) + ".";

    // d_below currently holds dLoss/d(c2 of this block).
    nn::relu_backward_inplace(bk.c2.data(), d_below.data(), d_below.size());
    Tensor<Scalar> d_c1({ch, hw, hw});
    nn::conv2d_backward(bk.c1.data(), ch, hw, hw, params.value(p + "conv2.weight").data(), ch,
                        Index(3), d_below.data(), grads.value(p + "conv2.weight").data(),
                        grads.value(p + "conv2.bias").data(), d_c1.data(), tr.scratch_a,
                        tr.scratch_b);
    nn::relu_backward_inplace(bk.c1.data(), d_c1.data(), d_c1.size());
    Tensor<Scalar> d_cat({cat_ch, hw, hw});
    nn::conv2d_backward(bk.cat.data(), cat_ch, hw, hw, params.value(p + "conv1.weight").data(),
                        ch, Index(3), d_c1.data(), grads.value(p + "conv1.weight").data(),
                        grads.value(p + "conv1.bias").data(), d_cat.data(), tr.scratch_a,
                        tr.scratch_b);

    // Split: first `ch` channels feed the up-conv, the rest are the skip.
    auto& dp = d_pooled[static_cast<size_t>(level)];
    dp = Tensor<Scalar>({tp, ch, hw, hw});
    std::memcpy(dp.data(), d_cat.data() + ch * hw * hw,
                sizeof(Scalar) * static_cast<size_t>(dp.size()));

    const Tensor<Scalar>& below_act = (j == 0) ? tr.enc[static_cast<size_t>(c.depth)].pooled
                                               : tr.dec[static_cast<size_t>(j - 1)].c2;
    Tensor<Scalar> d_next({below_ch, hw / 2, hw / 2});
    nn::deconv2_backward(below_act.data(), below_ch, hw / 2, hw / 2,
                         params.value(p + "up.weight").data(), ch, d_cat.data(),
                         grads.value(p + "up.weight").data(), grads.value(p + "up.bias").data(),
                         d_next.data(), tr.scratch_a);
    d_below = std::move(d_next);
  }
  d_pooled[static_cast<size_t>(c.depth)] = std::move(d_below);  // bottleneck, time-flattened

  // Encoder levels, deepest first. d_input carries the gradient of a level's
  // input sequence down to the level above it through the spatial pool.
  Tensor<Scalar> d_input;
  for (Index l = c.depth; l >= 0; --l) {
    auto& lv = tr.enc[static_cast<size_t>(l)];
    const Index cin = c.encoder_in_channels(l), cout = c.encoder_out_channels(l);
    const Index hw = c.patch_size >> l;
    const Index in_n = cin * hw * hw, out_n = cout * hw * hw;
    const Index plane = hw * hw;
    const std::string p = "encoder." + std::to_string(l) + ".";

    Tensor<Scalar> d_hd({T, cout, hw, hw});
    nn::tmaxpool_backward(d_pooled[static_cast<size_t>(l)].data(), lv.tidx.data(), T, out_n, win,
                          d_hd.data());
    if (l < c.depth) {
      const Index hw2 = hw / 2;
      for (Index t = 0; t < T; ++t)
        nn::maxpool2_backward(d_input.data() + t * cout * hw2 * hw2,
                              lv.sidx.data() + t * cout * hw2 * hw2, cout, hw, hw,
                              d_hd.data() + t * out_n);
    }
    if (lv.dropout) d_hd.flat() *= lv.mask.flat();

    // BPTT through h_t = relu(v_t + a * h_{t-1}).
    const auto& a = params.value(p + "carry");
    auto& d_a = grads.value(p + "carry");
    Tensor<Scalar> d_pre({cout, hw, hw});  // dLoss/d(pre-activation at step t+1)
    Tensor<Scalar> d_v({T, cout, hw, hw});
    for (Index t = T - 1; t >= 0; --t) {
      Scalar* dh = d_hd.data() + t * out_n;
      if (t < T - 1) {
        for (Index ch = 0; ch < cout; ++ch) {
          const Scalar ac = a.data()[ch];
          Scalar* dhc = dh + ch * plane;
          const Scalar* dpc = d_pre.data() + ch * plane;
          for (Index i = 0; i < plane; ++i) dhc[i] += ac * dpc[i];
        }
      }
      nn::relu_backward_inplace(lv.h.data() + t * out_n, dh, out_n);
      if (t > 0) {
        const Scalar* hprev = lv.h.data() + (t - 1) * out_n;
        for (Index ch = 0; ch < cout; ++ch) {
          const Scalar* dhc = dh + ch * plane;
          const Scalar* hc = hprev + ch * plane;
          Scalar acc = 0;
          for (Index i = 0; i < plane; ++i) acc += dhc[i] * hc[i];
          d_a.flat()[ch] += acc;
        }
      }
      std::memcpy(d_pre.data(), dh, sizeof(Scalar) * static_cast<size_t>(out_n));
      std::memcpy(d_v.data() + t * out_n, dh, sizeof(Scalar) * static_cast<size_t>(out_n));
    }

    Tensor<Scalar> d_u({T, cout, hw, hw});
    Tensor<Scalar> d_in;
    const bool want_dx = l > 0;
    if (want_dx) d_in = Tensor<Scalar>({T, cin, hw, hw});
    for (Index t = 0; t < T; ++t) {
      nn::conv2d_backward(lv.u.data() + t * out_n, cout, hw, hw,
                          params.value(p + "conv2.weight").data(), cout, Index(3),
                          d_v.data() + t * out_n, grads.value(p + "conv2.weight").data(),
                          grads.value(p + "conv2.bias").data(), d_u.data() + t * out_n,
                          tr.scratch_a, tr.scratch_b);
      nn::relu_backward_inplace(lv.u.data() + t * out_n, d_u.data() + t * out_n, out_n);
      nn::conv2d_backward(lv.input.data() + t * in_n, cin, hw, hw,
                          params.value(p + "conv1.weight").data(), cout, Index(3),
                          d_u.data() + t * out_n, grads.value(p + "conv1.weight").data(),
                          grads.value(p + "conv1.bias").data(),
                          want_dx ? d_in.data() + t * in_n : nullptr, tr.scratch_a, tr.scratch_b);
    }
    d_input = std::move(d_in);
  }
}

namespace detail {

template <typename Scalar>
void check_batch_dims(const ModelConfig& c, const BatchTensor<Scalar>& batch) {
  const auto& s = batch.x.shape();
  if (batch.x.rank() != 5) throw ConfigError("batch tensor must be [B,T,C,H,W]");
  if (s[1] != c.time_steps || s[2] != c.in_channels || s[3] != c.patch_size ||
      s[4] != c.patch_size)
    throw ConfigError("batch dimensions do not match model config");
}

}  // namespace detail

// Inference forward: dropout disabled, probabilities in (0,1). [B,H,W].
template <typename Scalar>
Tensor<Scalar> forward(const ParameterSet<Scalar>& params, const BatchTensor<Scalar>& batch) {
  detail::check_batch_dims(params.config, batch);
  batch.validate();
  const Index b = batch.x.dim(0);
  const Index hp = params.config.patch_size;
  const Index sample_n = batch.x.size() / b;
  Tensor<Scalar> out({b, hp, hp});
  SampleTrace<Scalar> tr;
  for (Index i = 0; i < b; ++i) {
    forward_sample(params, batch.x.data() + i * sample_n, tr);
    Scalar* dst = out.data() + i * hp * hp;
    for (Index j = 0; j < hp * hp; ++j) dst[j] = nn::sigmoid(tr.logits.flat()[j]);
  }
  return out;
}

// Zeroes time steps beyond t_avail, then runs forward. forward_early(., T)
// is bitwise identical to forward(.).
template <typename Scalar>
Tensor<Scalar> forward_early(const ParameterSet<Scalar>& params, const BatchTensor<Scalar>& batch,
                             Index t_avail) {
  const Index T = params.config.time_steps;
  if (t_avail < 1 || t_avail > T) throw ConfigError("t_avail out of range [1, T]");
  detail::check_batch_dims(params.config, batch);
  BatchTensor<Scalar> clipped{batch.x, batch.valid_steps};
  const Index b = clipped.x.dim(0);
  const Index chw = clipped.x.dim(2) * clipped.x.dim(3) * clipped.x.dim(4);
  for (Index i = 0; i < b; ++i) {
    for (Index t = t_avail; t < T; ++t)
      std::memset(clipped.x.data() + (i * T + t) * chw, 0,
                  sizeof(Scalar) * static_cast<size_t>(chw));
    clipped.valid_steps[static_cast<size_t>(i)] =
        std::min(clipped.valid_steps[static_cast<size_t>(i)], t_avail);
  }
  return forward(params, clipped);
}

// Max pool over the leading (time) axis of a [T, ...] tensor.
template <typename Scalar>
Tensor<Scalar> temporal_maxpool(const Tensor<Scalar>& features, Index window) {
  if (features.rank() < 1) throw ConfigError("temporal_maxpool: empty tensor");
  const Index t = features.dim(0);
  if (window < 1 || t % window != 0)
    throw ConfigError("temporal_maxpool: time length " + std::to_string(t) +
                      " not divisible by window " + std::to_string(window));
  std::vector<Index> oshape = features.shape();
  oshape[0] = t / window;
  Tensor<Scalar> out(oshape);
  nn::tmaxpool_forward(features.data(), t, features.size() / t, window, out.data(),
                       static_cast<std::uint8_t*>(nullptr));
  return out;
}

// mask = 1 where prob >= threshold.
template <typename Scalar>
Tensor<std::uint8_t> binarize(const Tensor<Scalar>& probs, double threshold = 0.5) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0,1)");
  if ((probs.flat() < Scalar(0)).any() || (probs.flat() > Scalar(1)).any())
    throw DataError("probabilities must lie in [0,1]");
  Tensor<std::uint8_t> mask(probs.shape());
  for (Index i = 0; i < probs.size(); ++i)
    mask.flat()[i] = probs.flat()[i] >= static_cast<Scalar>(threshold) ? 1 : 0;
  return mask;
}

}  // namespace cropseg
