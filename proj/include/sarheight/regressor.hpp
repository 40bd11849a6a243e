#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sarheight/common.hpp"
#include "sarheight/geometry.hpp"
#include "sarheight/parallel.hpp"
#include "sarheight/pipeline.hpp"
#include "sarheight/rng.hpp"

namespace sarheight {

/// Dense row-major value container with an explicit shape. Training math is
/// 64-bit throughout so finite-difference checks are meaningful.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape_) : shape(std::move(shape_)) {
    size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive");
      n *= static_cast<size_t>(d);
    }
    values.assign(n, 0.0);
  }

  size_t size() const { return values.size(); }

  void check_finite(const std::string& what) const {
    for (double v : values) {
      if (!std::isfinite(v)) throw NumericError(what + ": non-finite value");
    }
  }
};

struct ConvSpec {
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
};

/// Compact convolutional extractor + fully connected head. The image branch
/// sees a 2-channel chip (amplitude, footprint mask); its globally pooled
/// features are concatenated with the geometric features (FBB extents and
/// cos theta) before the fully connected stack, which regresses the single
/// BBB range extent in meters.
struct ModelConfig {
  int chip_px = 128;
  std::vector<ConvSpec> conv_layers = {{8, 5, 2}, {16, 3, 2}, {32, 3, 2}};
  std::vector<int> fc_widths = {64, 1};
  int extra_features = 3;  // fbb_extent_u_m, fbb_extent_v_m, cos_theta
  uint64_t seed = 0;
};

/// Derived parameter layout: offsets of every weight/bias tensor in the flat
/// parameter vector, declaration order (conv w, conv b, ..., fc w, fc b).
struct ModelLayout {
  struct Conv {
    int in_ch, out_ch, k, s, in_px, out_px;
    size_t w_off, b_off;
  };
  struct Fc {
    int in, out;
    size_t w_off, b_off;
    bool relu;  // hidden layers only
  };
  std::vector<Conv> convs;
  std::vector<Fc> fcs;
  int chip_px = 0;
  int feat_channels = 0;  // channels entering global average pooling
  int extra_features = 0;
  size_t param_count = 0;

  static ModelLayout build(const ModelConfig& cfg) {
    ModelLayout L;
    L.chip_px = cfg.chip_px;
    L.extra_features = cfg.extra_features;
    if (cfg.chip_px <= 0) throw ConfigError("model: chip_px must be positive");
    if (cfg.extra_features < 0) throw ConfigError("model: extra_features must be >= 0");
    if (cfg.fc_widths.empty()) throw ConfigError("model: fc_widths must be non-empty");
    if (cfg.fc_widths.back() != 1) throw ConfigError("model: final fc width must be 1");
    size_t off = 0;
    int ch = 2;
    int px = cfg.chip_px;
    for (size_t i = 0; i < cfg.conv_layers.size(); ++i) {
      const ConvSpec& c = cfg.conv_layers[i];
      std::string name = "conv" + std::to_string(i + 1);
      if (c.out_channels <= 0 || c.kernel <= 0 || c.stride <= 0) {
        throw ConfigError("model: " + name + " has non-positive dimensions");
      }
      if (px < c.kernel) {
        throw ConfigError("model: " + name + " kernel " + std::to_string(c.kernel) +
                          " exceeds its input size " + std::to_string(px));
      }
      Conv conv;
      conv.in_ch = ch;
      conv.out_ch = c.out_channels;
      conv.k = c.kernel;
      conv.s = c.stride;
      conv.in_px = px;
      conv.out_px = (px - c.kernel) / c.stride + 1;
      conv.w_off = off;
      off += static_cast<size_t>(conv.out_ch) * conv.in_ch * conv.k * conv.k;
      conv.b_off = off;
      off += static_cast<size_t>(conv.out_ch);
      L.convs.push_back(conv);
      ch = conv.out_ch;
      px = conv.out_px;
    }
    L.feat_channels = ch;
    int in = ch + cfg.extra_features;
    for (size_t i = 0; i < cfg.fc_widths.size(); ++i) {
      int out = cfg.fc_widths[i];
      if (out <= 0) throw ConfigError("model: fc width must be positive");
      Fc fc;
      fc.in = in;
      fc.out = out;
      fc.w_off = off;
      off += static_cast<size_t>(out) * in;
      fc.b_off = off;
      off += static_cast<size_t>(out);
      fc.relu = (i + 1 < cfg.fc_widths.size());
      L.fcs.push_back(fc);
      in = out;
    }
    L.param_count = off;
    return L;
  }
};

struct TrainState {
  ModelConfig config;
  Tensor params;  // flat, declaration order
  Tensor adam_m;
  Tensor adam_v;
  int64_t step = 0;
  std::vector<std::pair<int64_t, double>> loss_history;  // (step, batch MSE)
};

/// Seeded Glorot-uniform initialization: weights in +-sqrt(6/(fan_in +
/// fan_out)), biases zero. Same seed, same bits.
inline TrainState init_model(const ModelConfig& config) {
  ModelLayout L = ModelLayout::build(config);
  TrainState state;
  state.config = config;
  state.params = Tensor({static_cast<int>(L.param_count)});
  state.adam_m = Tensor({static_cast<int>(L.param_count)});
  state.adam_v = Tensor({static_cast<int>(L.param_count)});
  Rng rng = derive(config.seed, stream_tag("model-init"));
  for (const auto& c : L.convs) {
    double fan_in = static_cast<double>(c.in_ch) * c.k * c.k;
    double fan_out = static_cast<double>(c.out_ch) * c.k * c.k;
    double bound = std::sqrt(6.0 / (fan_in + fan_out));
    size_t n = static_cast<size_t>(c.out_ch) * c.in_ch * c.k * c.k;
    for (size_t i = 0; i < n; ++i) state.params.values[c.w_off + i] = rng.uniform(-bound, bound);
  }
  for (const auto& f : L.fcs) {
    double bound = std::sqrt(6.0 / (f.in + f.out));
    size_t n = static_cast<size_t>(f.out) * f.in;
    for (size_t i = 0; i < n; ++i) state.params.values[f.w_off + i] = rng.uniform(-bound, bound);
  }
  return state;
}

namespace detail {

struct ForwardTrace {
  std::vector<std::vector<double>> conv_in;   // input to each conv layer
  std::vector<std::vector<double>> conv_pre;  // pre-activation of each conv layer
  std::vector<double> features;               // pooled channels ++ extras
  std::vector<std::vector<double>> fc_pre;
  std::vector<std::vector<double>> fc_act;
};

inline void sample_extras(const BuildingSample& s, double* out) {
  out[0] = s.fbb_extent_u_m;
  out[1] = s.fbb_extent_v_m;
  out[2] = s.cos_theta;
}

inline double forward_sample(const ModelLayout& L, const std::vector<double>& params,
                             const BuildingSample& s, ForwardTrace* trace) {
  const size_t chip_len = static_cast<size_t>(L.chip_px) * L.chip_px;
  if (s.chip_px != L.chip_px || s.chip_amp.size() != chip_len ||
      s.chip_mask.size() != chip_len) {
    throw ShapeError("forward: chip of sample '" + s.building_id + "' is " +
                     std::to_string(s.chip_px) + " px, model expects " +
                     std::to_string(L.chip_px));
  }
  if (L.extra_features != 3) {
    throw ShapeError("forward: model expects " + std::to_string(L.extra_features) +
                     " extra features, samples carry 3");
  }
  ForwardTrace local;
  ForwardTrace& t = trace ? *trace : local;
  t.conv_in.resize(L.convs.size());
  t.conv_pre.resize(L.convs.size());
  t.fc_pre.resize(L.fcs.size());
  t.fc_act.resize(L.fcs.size());

  std::vector<double> x(2 * chip_len);
  for (size_t i = 0; i < chip_len; ++i) x[i] = s.chip_amp[i];
  for (size_t i = 0; i < chip_len; ++i) x[chip_len + i] = s.chip_mask[i];

  for (size_t l = 0; l < L.convs.size(); ++l) {
    const auto& c = L.convs[l];
    t.conv_in[l] = std::move(x);
    const std::vector<double>& in = t.conv_in[l];
    std::vector<double>& pre = t.conv_pre[l];
    pre.assign(static_cast<size_t>(c.out_ch) * c.out_px * c.out_px, 0.0);
    std::vector<double> act(pre.size());
    const double* w = params.data() + c.w_off;
    const double* b = params.data() + c.b_off;
    for (int oc = 0; oc < c.out_ch; ++oc) {
      for (int oy = 0; oy < c.out_px; ++oy) {
        for (int ox = 0; ox < c.out_px; ++ox) {
          double acc = b[oc];
          for (int ic = 0; ic < c.in_ch; ++ic) {
            const double* in_ch = in.data() + static_cast<size_t>(ic) * c.in_px * c.in_px;
            const double* w_ch =
                w + (static_cast<size_t>(oc) * c.in_ch + ic) * c.k * c.k;
            for (int ky = 0; ky < c.k; ++ky) {
              const double* in_row = in_ch + static_cast<size_t>(oy * c.s + ky) * c.in_px +
                                     static_cast<size_t>(ox) * c.s;
              const double* w_row = w_ch + static_cast<size_t>(ky) * c.k;
              for (int kx = 0; kx < c.k; ++kx) acc += in_row[kx] * w_row[kx];
            }
          }
          if (!std::isfinite(acc)) {
            throw NumericError("forward: non-finite value in conv" + std::to_string(l + 1));
          }
          size_t idx = (static_cast<size_t>(oc) * c.out_px + oy) * c.out_px + ox;
          pre[idx] = acc;
          act[idx] = acc > 0.0 ? acc : 0.0;
        }
      }
    }
    x = std::move(act);
  }

  // global average pool per channel, then append geometric features
  int feat_px = L.convs.empty() ? L.chip_px : L.convs.back().out_px;
  size_t plane = static_cast<size_t>(feat_px) * feat_px;
  t.features.assign(static_cast<size_t>(L.feat_channels) + L.extra_features, 0.0);
  for (int ch = 0; ch < L.feat_channels; ++ch) {
    double sum = 0.0;
    const double* p = x.data() + static_cast<size_t>(ch) * plane;
    for (size_t i = 0; i < plane; ++i) sum += p[i];
    t.features[ch] = sum / static_cast<double>(plane);
  }
  sample_extras(s, t.features.data() + L.feat_channels);

  std::vector<double> v = t.features;
  for (size_t l = 0; l < L.fcs.size(); ++l) {
    const auto& f = L.fcs[l];
    const double* w = params.data() + f.w_off;
    const double* b = params.data() + f.b_off;
    std::vector<double> pre(f.out);
    for (int o = 0; o < f.out; ++o) {
      double acc = b[o];
      const double* wr = w + static_cast<size_t>(o) * f.in;
      for (int i = 0; i < f.in; ++i) acc += wr[i] * v[i];
      if (!std::isfinite(acc)) {
        throw NumericError("forward: non-finite value in fc" + std::to_string(l + 1));
      }
      pre[o] = acc;
    }
    t.fc_pre[l] = pre;
    if (f.relu) {
      for (double& z : pre) z = z > 0.0 ? z : 0.0;
    }
    t.fc_act[l] = pre;
    v = std::move(pre);
  }
  return v[0];
}

/// Accumulates d(loss)/d(params) for one sample into `grad` given
/// d(loss)/d(output).
inline void backward_sample(const ModelLayout& L, const std::vector<double>& params,
                            const ForwardTrace& t, double d_out, std::vector<double>& grad) {
  std::vector<double> d_act = {d_out};
  for (size_t li = L.fcs.size(); li-- > 0;) {
    const auto& f = L.fcs[li];
    std::vector<double> d_pre(f.out);
    for (int o = 0; o < f.out; ++o) {
      double g = d_act[o];
      if (f.relu && t.fc_pre[li][o] <= 0.0) g = 0.0;
      if (!std::isfinite(g)) {
        throw NumericError("backward: non-finite value in fc" + std::to_string(li + 1));
      }
      d_pre[o] = g;
    }
    const std::vector<double>& in = li == 0 ? t.features : t.fc_act[li - 1];
    const double* w = params.data() + f.w_off;
    double* gw = grad.data() + f.w_off;
    double* gb = grad.data() + f.b_off;
    std::vector<double> d_in(f.in, 0.0);
    for (int o = 0; o < f.out; ++o) {
      double g = d_pre[o];
      gb[o] += g;
      const double* wr = w + static_cast<size_t>(o) * f.in;
      double* gwr = gw + static_cast<size_t>(o) * f.in;
      for (int i = 0; i < f.in; ++i) {
        gwr[i] += g * in[i];
        d_in[i] += g * wr[i];
      }
    }
    d_act = std::move(d_in);
  }

  // split fc input gradient: pooled channels flow back, extras stop here
  int feat_px = L.convs.empty() ? L.chip_px : L.convs.back().out_px;
  size_t plane = static_cast<size_t>(feat_px) * feat_px;
  std::vector<double> d_x(static_cast<size_t>(L.feat_channels) * plane);
  for (int ch = 0; ch < L.feat_channels; ++ch) {
    double g = d_act[ch] / static_cast<double>(plane);
    double* p = d_x.data() + static_cast<size_t>(ch) * plane;
    for (size_t i = 0; i < plane; ++i) p[i] = g;
  }

  for (size_t li = L.convs.size(); li-- > 0;) {
    const auto& c = L.convs[li];
    const std::vector<double>& in = t.conv_in[li];
    const std::vector<double>& pre = t.conv_pre[li];
    const double* w = params.data() + c.w_off;
    double* gw = grad.data() + c.w_off;
    double* gb = grad.data() + c.b_off;
    std::vector<double> d_in(static_cast<size_t>(c.in_ch) * c.in_px * c.in_px, 0.0);
    for (int oc = 0; oc < c.out_ch; ++oc) {
      for (int oy = 0; oy < c.out_px; ++oy) {
        for (int ox = 0; ox < c.out_px; ++ox) {
          size_t idx = (static_cast<size_t>(oc) * c.out_px + oy) * c.out_px + ox;
          double g = d_x[idx];
          if (pre[idx] <= 0.0) continue;  // relu gate
          if (!std::isfinite(g)) {
            throw NumericError("backward: non-finite value in conv" + std::to_string(li + 1));
          }
          gb[oc] += g;
          for (int ic = 0; ic < c.in_ch; ++ic) {
            const double* in_ch = in.data() + static_cast<size_t>(ic) * c.in_px * c.in_px;
            double* d_in_ch = d_in.data() + static_cast<size_t>(ic) * c.in_px * c.in_px;
            const double* w_ch = w + (static_cast<size_t>(oc) * c.in_ch + ic) * c.k * c.k;
            double* gw_ch = gw + (static_cast<size_t>(oc) * c.in_ch + ic) * c.k * c.k;
            for (int ky = 0; ky < c.k; ++ky) {
              size_t row = static_cast<size_t>(oy * c.s + ky) * c.in_px +
                           static_cast<size_t>(ox) * c.s;
              for (int kx = 0; kx < c.k; ++kx) {
                gw_ch[static_cast<size_t>(ky) * c.k + kx] += g * in_ch[row + kx];
                d_in_ch[row + kx] += g * w_ch[static_cast<size_t>(ky) * c.k + kx];
              }
            }
          }
        }
      }
    }
    d_x = std::move(d_in);
  }
}

}  // namespace detail

/// Batch forward pass; one predicted BBB range extent (meters) per sample.
inline std::vector<double> forward(const TrainState& state,
                                   const std::vector<const BuildingSample*>& batch,
                                   int threads = 1) {
  if (batch.empty()) throw InvalidInputError("forward: empty batch");
  ModelLayout L = ModelLayout::build(state.config);
  std::vector<double> preds(batch.size());
  parallel_for(batch.size(), threads, [&](size_t i) {
    preds[i] = detail::forward_sample(L, state.params.values, *batch[i], nullptr);
  });
  return preds;
}

inline std::vector<double> forward(const TrainState& state,
                                   const std::vector<BuildingSample>& batch, int threads = 1) {
  std::vector<const BuildingSample*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& s : batch) ptrs.push_back(&s);
  return forward(state, ptrs, threads);
}

/// MSE = 1/n * sum_i (y_i - yhat_i)^2.
inline double mse_loss(const std::vector<double>& predictions,
                       const std::vector<double>& targets) {
  if (predictions.size() != targets.size()) {
    throw InvalidInputError("mse_loss: prediction/target length mismatch");
  }
  if (predictions.empty()) throw InvalidInputError("mse_loss: empty batch");
  double acc = 0.0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    double d = predictions[i] - targets[i];
    acc += d * d;
  }
  return acc / static_cast<double>(predictions.size());
}

/// Gradient of mse_loss(forward(batch), targets) with respect to every
/// parameter. Per-sample gradients are computed independently (optionally in
/// parallel) and summed in sample order, so the reduction is fixed
/// regardless of thread count.
inline Tensor backward(const TrainState& state, const std::vector<const BuildingSample*>& batch,
                       const std::vector<double>& targets, int threads = 1,
                       double* loss_out = nullptr, std::vector<double>* preds_out = nullptr) {
  if (batch.empty()) throw InvalidInputError("backward: empty batch");
  if (batch.size() != targets.size()) {
    throw InvalidInputError("backward: batch/target length mismatch");
  }
  ModelLayout L = ModelLayout::build(state.config);
  size_t n = batch.size();
  std::vector<double> preds(n);
  std::vector<std::vector<double>> partial(n);
  parallel_for(n, threads, [&](size_t i) {
    detail::ForwardTrace trace;
    preds[i] = detail::forward_sample(L, state.params.values, *batch[i], &trace);
    partial[i].assign(L.param_count, 0.0);
    double d_out = 2.0 * (preds[i] - targets[i]) / static_cast<double>(n);
    detail::backward_sample(L, state.params.values, trace, d_out, partial[i]);
  });
  Tensor grad({static_cast<int>(L.param_count)});
  for (size_t i = 0; i < n; ++i) {
    for (size_t p = 0; p < L.param_count; ++p) grad.values[p] += partial[i][p];
  }
  if (loss_out) *loss_out = mse_loss(preds, targets);
  if (preds_out) *preds_out = std::move(preds);
  return grad;
}

inline Tensor backward(const TrainState& state, const std::vector<BuildingSample>& batch,
                       const std::vector<double>& targets, int threads = 1,
                       double* loss_out = nullptr) {
  std::vector<const BuildingSample*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& s : batch) ptrs.push_back(&s);
  return backward(state, ptrs, targets, threads, loss_out);
}

struct TrainHyper {
  double lr = 1e-3;
  int batch = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 1;
  uint64_t seed = 0;
  int threads = 1;
};

/// Adam-style training on target_lbbb_m. Epoch shuffles are seeded; loss
/// history grows one entry per step. Non-finite loss aborts with the step
/// index.
inline TrainState train(TrainState state, const std::vector<BuildingSample>& dataset,
                        const TrainHyper& hyper) {
  if (dataset.empty()) throw InvalidInputError("train: empty dataset");
  if (hyper.batch <= 0) throw InvalidInputError("train: batch size must be positive");
  ModelLayout L = ModelLayout::build(state.config);
  std::vector<size_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_root = derive(hyper.seed, stream_tag("train-shuffle"));

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    Rng er = shuffle_root.substream(static_cast<uint64_t>(epoch));
    er.shuffle(order);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(hyper.batch)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(hyper.batch));
      std::vector<const BuildingSample*> batch;
      std::vector<double> targets;
      batch.reserve(end - start);
      targets.reserve(end - start);
      for (size_t i = start; i < end; ++i) {
        batch.push_back(&dataset[order[i]]);
        targets.push_back(dataset[order[i]].target_lbbb_m);
      }
      double loss = 0.0;
      Tensor grad = backward(state, batch, targets, hyper.threads, &loss);
      if (!std::isfinite(loss)) {
        throw NumericError("train: loss diverged at step " + std::to_string(state.step + 1));
      }
      ++state.step;
      double t = static_cast<double>(state.step);
      double bc1 = 1.0 - std::pow(hyper.beta1, t);
      double bc2 = 1.0 - std::pow(hyper.beta2, t);
      for (size_t p = 0; p < L.param_count; ++p) {
        double g = grad.values[p];
        double m = hyper.beta1 * state.adam_m.values[p] + (1.0 - hyper.beta1) * g;
        double v = hyper.beta2 * state.adam_v.values[p] + (1.0 - hyper.beta2) * g * g;
        state.adam_m.values[p] = m;
        state.adam_v.values[p] = v;
        state.params.values[p] -= hyper.lr * (m / bc1) / (std::sqrt(v / bc2) + hyper.eps);
      }
      state.loss_history.emplace_back(state.step, loss);
    }
  }
  return state;
}

/// Height from the regressed BBB extent via the inverse layover relation;
/// undershoot (predicted extent below the FBB extent) clamps to zero and is
/// reported.
inline HeightEstimate predict_height(const TrainState& state, const BuildingSample& sample,
                                     LayoverFactor factor = LayoverFactor::cos_theta) {
  ModelLayout L = ModelLayout::build(state.config);
  double pred = detail::forward_sample(L, state.params.values, sample, nullptr);
  double length = pred - sample.fbb_extent_u_m;
  if (length < 0.0) return {0.0, true};
  double cos_th = sample.cos_theta;
  double scale = factor == LayoverFactor::cos_theta
                     ? cos_th
                     : cos_th / std::sqrt(std::max(0.0, 1.0 - cos_th * cos_th));
  return {length / scale, false};
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json conv = nlohmann::json::array();
  for (const auto& c : cfg.conv_layers) conv.push_back({c.out_channels, c.kernel, c.stride});
  return {{"chip_px", cfg.chip_px},
          {"conv_layers", conv},
          {"fc_widths", cfg.fc_widths},
          {"extra_features", cfg.extra_features},
          {"seed", cfg.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.chip_px = j.at("chip_px").get<int>();
  cfg.conv_layers.clear();
  for (const auto& c : j.at("conv_layers")) {
    cfg.conv_layers.push_back({c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<int>()});
  }
  cfg.fc_widths = j.at("fc_widths").get<std::vector<int>>();
  cfg.extra_features = j.at("extra_features").get<int>();
  cfg.seed = j.at("seed").get<uint64_t>();
  return cfg;
}

/// Writes `<base>.json` (config, step, seed) plus `<base>.bin` with all
/// weights in declaration order, f64 little-endian.
inline void save_checkpoint(const TrainState& state, const std::filesystem::path& base,
                            const std::string& config_hash = "") {
  nlohmann::json hdr;
  hdr["config"] = model_config_to_json(state.config);
  hdr["step"] = state.step;
  hdr["seed"] = state.config.seed;
  if (!config_hash.empty()) hdr["config_hash"] = config_hash;
  std::filesystem::path json_path = base;
  json_path += ".json";
  std::ofstream out(json_path);
  if (!out) throw IoError("cannot open for writing: " + json_path.string());
  out << hdr.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + json_path.string());

  std::filesystem::path bin_path = base;
  bin_path += ".bin";
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open for writing: " + bin_path.string());
  bin.write(reinterpret_cast<const char*>(state.params.values.data()),
            static_cast<std::streamsize>(state.params.size() * sizeof(double)));
  if (!bin) throw IoError("write failed: " + bin_path.string());
}

inline TrainState load_checkpoint(const std::filesystem::path& base,
                                  std::string* config_hash = nullptr) {
  std::filesystem::path json_path = base;
  json_path += ".json";
  std::ifstream in(json_path);
  if (!in) throw MissingInputError("cannot open checkpoint header: " + json_path.string());
  nlohmann::json hdr;
  try {
    in >> hdr;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint header " + json_path.string() + ": " + e.what());
  }
  TrainState state;
  try {
    state.config = model_config_from_json(hdr.at("config"));
    state.step = hdr.at("step").get<int64_t>();
    if (config_hash) *config_hash = hdr.value("config_hash", "");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint header " + json_path.string() + ": " + e.what());
  }
  ModelLayout L = ModelLayout::build(state.config);
  state.params = Tensor({static_cast<int>(L.param_count)});
  state.adam_m = Tensor({static_cast<int>(L.param_count)});
  state.adam_v = Tensor({static_cast<int>(L.param_count)});

  std::filesystem::path bin_path = base;
  bin_path += ".bin";
  std::ifstream bin(bin_path, std::ios::binary | std::ios::ate);
  if (!bin) throw MissingInputError("cannot open checkpoint weights: " + bin_path.string());
  uint64_t actual = static_cast<uint64_t>(bin.tellg());
  uint64_t expected = L.param_count * sizeof(double);
  if (actual != expected) {
    throw FormatError("checkpoint weights " + bin_path.string() + ": expected " +
                      std::to_string(expected) + " bytes, found " + std::to_string(actual));
  }
  bin.seekg(0);
  bin.read(reinterpret_cast<char*>(state.params.values.data()),
           static_cast<std::streamsize>(expected));
  if (!bin) throw IoError("read failed: " + bin_path.string());
  state.params.check_finite("checkpoint weights");
  return state;
}

inline void write_loss_csv(const TrainState& state, const std::filesystem::path& path,
                           const std::string& config_hash = "") {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << "\n";
  out << "step,loss\n";
  char buf[64];
  for (const auto& [step, loss] : state.loss_history) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g\n", static_cast<long long>(step), loss);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace sarheight
