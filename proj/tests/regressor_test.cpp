#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "sarheight/regressor.hpp"
#include "sarheight/scene_sim.hpp"
#include "test_util.hpp"

using namespace sarheight;

namespace {

BuildingSample random_sample(Rng& rng, int chip_px, const std::string& id = "s") {
  BuildingSample s;
  s.building_id = id;
  s.city_id = "c";
  s.chip_px = chip_px;
  s.chip_amp.resize(static_cast<size_t>(chip_px) * chip_px);
  s.chip_mask.resize(s.chip_amp.size());
  for (size_t i = 0; i < s.chip_amp.size(); ++i) {
    s.chip_amp[i] = static_cast<float>(rng.uniform(0.0, 2.0));
    s.chip_mask[i] = rng.next_double() < 0.3 ? 1.0f : 0.0f;
  }
  s.fbb_extent_u_m = rng.uniform(8.0, 30.0);
  s.fbb_extent_v_m = rng.uniform(8.0, 30.0);
  s.cos_theta = rng.uniform(0.4, 0.9);
  s.ref_height_m = rng.uniform(3.0, 40.0);
  s.target_lbbb_m = s.fbb_extent_u_m + s.ref_height_m * s.cos_theta;
  return s;
}

std::vector<double> targets_of(const std::vector<BuildingSample>& batch) {
  std::vector<double> t;
  for (const auto& s : batch) t.push_back(s.target_lbbb_m);
  return t;
}

/// Central finite differences of mse_loss(forward(batch), targets) over every
/// parameter; the independent oracle for backward().
std::vector<double> fd_gradient(TrainState state, const std::vector<BuildingSample>& batch,
                                const std::vector<double>& targets, double eps = 1e-5) {
  std::vector<double> grad(state.params.size());
  for (size_t p = 0; p < state.params.size(); ++p) {
    double orig = state.params.values[p];
    state.params.values[p] = orig + eps;
    double up = mse_loss(forward(state, batch), targets);
    state.params.values[p] = orig - eps;
    double down = mse_loss(forward(state, batch), targets);
    state.params.values[p] = orig;
    grad[p] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double denom = std::max({std::fabs(a[i]) + std::fabs(b[i]), 1e-3});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace

// ---------------------------------------------------------------------------
// init
// ---------------------------------------------------------------------------

TEST(InitModel, ParameterCountMatchesHandFormula) {
  ModelConfig cfg;  // defaults: chip 128, conv (8,5,2)(16,3,2)(32,3,2), fc 64,1
  TrainState state = init_model(cfg);
  // conv: out*in*k^2 + out; fc: out*in + out
  size_t expected = (8 * 2 * 25 + 8) + (16 * 8 * 9 + 16) + (32 * 16 * 9 + 32) +
                    ((32 + 3) * 64 + 64) + (64 * 1 + 1);
  EXPECT_EQ(state.params.size(), expected);
  EXPECT_EQ(expected, 8585u);
}

TEST(InitModel, SameSeedSameBits) {
  ModelConfig cfg;
  cfg.seed = 17;
  TrainState a = init_model(cfg);
  TrainState b = init_model(cfg);
  EXPECT_EQ(a.params.values, b.params.values);
  cfg.seed = 18;
  TrainState c = init_model(cfg);
  EXPECT_NE(a.params.values, c.params.values);
}

TEST(InitModel, RejectsBadConfigs) {
  ModelConfig bad_fc;
  bad_fc.fc_widths = {64, 2};
  EXPECT_THROW(init_model(bad_fc), ConfigError);

  ModelConfig big_kernel;
  big_kernel.chip_px = 8;
  big_kernel.conv_layers = {{4, 16, 2}};
  EXPECT_THROW(init_model(big_kernel), ConfigError);

  ModelConfig empty_fc;
  empty_fc.fc_widths = {};
  EXPECT_THROW(init_model(empty_fc), ConfigError);
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

TEST(Forward, ZeroWeightsPredictZero) {
  ModelConfig cfg;
  cfg.chip_px = 16;
  cfg.conv_layers = {{4, 3, 2}};
  cfg.fc_widths = {8, 1};
  TrainState state = init_model(cfg);
  std::fill(state.params.values.begin(), state.params.values.end(), 0.0);
  Rng rng(3);
  std::vector<BuildingSample> batch = {random_sample(rng, 16), random_sample(rng, 16)};
  for (double p : forward(state, batch)) EXPECT_EQ(p, 0.0);
}

TEST(Forward, DuplicateSamplesPredictIdentically) {
  ModelConfig cfg;
  cfg.chip_px = 16;
  cfg.conv_layers = {{4, 3, 2}};
  cfg.fc_widths = {8, 1};
  cfg.seed = 5;
  TrainState state = init_model(cfg);
  Rng rng(4);
  BuildingSample s = random_sample(rng, 16);
  auto preds = forward(state, std::vector<BuildingSample>{s, s, s});
  EXPECT_EQ(preds[0], preds[1]);
  EXPECT_EQ(preds[1], preds[2]);
}

TEST(Forward, MatchesHandUnrolledTinyNetwork) {
  // 1 conv layer (1 channel, 3x3, stride 1) on a 4x4 chip, then GAP and a
  // single linear layer over [pooled, extras].
  ModelConfig cfg;
  cfg.chip_px = 4;
  cfg.conv_layers = {{1, 3, 1}};
  cfg.fc_widths = {1};
  cfg.seed = 9;
  TrainState state = init_model(cfg);
  Rng rng(10);
  BuildingSample s = random_sample(rng, 4);

  // independent arithmetic
  const double* w = state.params.values.data();          // [1][2][3][3]
  double bias = state.params.values[18];                 // conv bias
  const double* fcw = state.params.values.data() + 19;   // [1][4]
  double fcb = state.params.values[23];
  double pooled = 0.0;
  for (int oy = 0; oy < 2; ++oy) {
    for (int ox = 0; ox < 2; ++ox) {
      double acc = bias;
      for (int ic = 0; ic < 2; ++ic) {
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            double in = ic == 0 ? s.chip_amp[(oy + ky) * 4 + (ox + kx)]
                                : s.chip_mask[(oy + ky) * 4 + (ox + kx)];
            acc += in * w[(ic * 3 + ky) * 3 + kx];
          }
        }
      }
      pooled += std::max(acc, 0.0);
    }
  }
  pooled /= 4.0;
  double expected = fcb + fcw[0] * pooled + fcw[1] * s.fbb_extent_u_m +
                    fcw[2] * s.fbb_extent_v_m + fcw[3] * s.cos_theta;

  auto preds = forward(state, std::vector<BuildingSample>{s});
  EXPECT_NEAR(preds[0], expected, 1e-12);
}

TEST(Forward, PermutationInvariance) {
  ModelConfig cfg;
  cfg.chip_px = 12;
  cfg.conv_layers = {{3, 3, 2}};
  cfg.fc_widths = {6, 1};
  cfg.seed = 6;
  TrainState state = init_model(cfg);
  Rng rng(11);
  std::vector<BuildingSample> batch;
  for (int i = 0; i < 7; ++i) batch.push_back(random_sample(rng, 12, "s" + std::to_string(i)));
  auto preds = forward(state, batch);
  std::vector<BuildingSample> reversed(batch.rbegin(), batch.rend());
  auto rpreds = forward(state, reversed);
  for (size_t i = 0; i < batch.size(); ++i) {
    EXPECT_EQ(preds[i], rpreds[batch.size() - 1 - i]);
  }
}

TEST(Forward, ShapeMismatchNamesTheProblem) {
  ModelConfig cfg;
  cfg.chip_px = 16;
  cfg.conv_layers = {{4, 3, 2}};
  cfg.fc_widths = {1};
  TrainState state = init_model(cfg);
  Rng rng(12);
  BuildingSample wrong = random_sample(rng, 8);
  EXPECT_THROW(forward(state, std::vector<BuildingSample>{wrong}), ShapeError);
  EXPECT_THROW(forward(state, std::vector<BuildingSample>{}), InvalidInputError);
}

// ---------------------------------------------------------------------------
// mse_loss
// ---------------------------------------------------------------------------

TEST(MseLoss, MatchesDefinition) {
  EXPECT_EQ(mse_loss({1, 2, 3}, {1, 2, 3}), 0.0);
  EXPECT_NEAR(mse_loss({1, 3}, {2, 5}), 2.5, 1e-15);  // (1 + 4) / 2
  // constant shift c -> loss c^2
  std::vector<double> t = {4.0, 9.0, -2.0, 7.5};
  std::vector<double> shifted;
  for (double v : t) shifted.push_back(v + 1.75);
  EXPECT_NEAR(mse_loss(shifted, t), 1.75 * 1.75, 1e-12);
  EXPECT_THROW(mse_loss({1.0}, {1.0, 2.0}), InvalidInputError);
  EXPECT_THROW(mse_loss({}, {}), InvalidInputError);
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

TEST(Backward, ZeroGradientAtPerfectFit) {
  ModelConfig cfg;
  cfg.chip_px = 12;
  cfg.conv_layers = {{3, 3, 2}};
  cfg.fc_widths = {6, 1};
  cfg.seed = 21;
  TrainState state = init_model(cfg);
  Rng rng(22);
  std::vector<BuildingSample> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_sample(rng, 12));
  std::vector<double> targets = forward(state, batch);
  Tensor grad = backward(state, batch, targets);
  for (double g : grad.values) EXPECT_EQ(g, 0.0);
}

TEST(Backward, MatchesFiniteDifferencesAcrossConfigs) {
  struct Case {
    int chip;
    std::vector<ConvSpec> conv;
    std::vector<int> fc;
  };
  std::vector<Case> cases = {
      {8, {{2, 3, 2}}, {4, 1}},
      {12, {{3, 3, 2}, {4, 3, 1}}, {5, 1}},
      {10, {{2, 5, 1}}, {1}},
      {8, {}, {6, 1}},
      {9, {{4, 3, 3}}, {3, 1}},
  };
  for (size_t ci = 0; ci < cases.size(); ++ci) {
    ModelConfig cfg;
    cfg.chip_px = cases[ci].chip;
    cfg.conv_layers = cases[ci].conv;
    cfg.fc_widths = cases[ci].fc;
    cfg.seed = 100 + ci;
    TrainState state = init_model(cfg);
    Rng rng(200 + ci);
    std::vector<BuildingSample> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(random_sample(rng, cases[ci].chip));
    auto targets = targets_of(batch);
    Tensor grad = backward(state, batch, targets);
    auto oracle = fd_gradient(state, batch, targets);
    double err = max_relative_error(grad.values, oracle);
    EXPECT_LT(err, 1e-4) << "config " << ci;
  }
}

TEST(Backward, MatchesClosedFormLinearRegression) {
  // no conv layers + a single fc layer = plain linear regression over
  // [mean(amp), mean(mask), fbb_u, fbb_v, cos_theta]
  ModelConfig cfg;
  cfg.chip_px = 6;
  cfg.conv_layers = {};
  cfg.fc_widths = {1};
  cfg.seed = 31;
  TrainState state = init_model(cfg);
  Rng rng(32);
  std::vector<BuildingSample> batch;
  for (int i = 0; i < 5; ++i) batch.push_back(random_sample(rng, 6));
  auto targets = targets_of(batch);

  auto features = [](const BuildingSample& s) {
    double amp = 0.0, mask = 0.0;
    for (float v : s.chip_amp) amp += v;
    for (float v : s.chip_mask) mask += v;
    size_t n = s.chip_amp.size();
    return std::vector<double>{amp / n, mask / n, s.fbb_extent_u_m, s.fbb_extent_v_m,
                               s.cos_theta};
  };
  const double* w = state.params.values.data();
  double b = state.params.values[5];
  std::vector<double> grad_w(5, 0.0);
  double grad_b = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    auto x = features(batch[i]);
    double pred = b;
    for (int j = 0; j < 5; ++j) pred += w[j] * x[j];
    double d = 2.0 * (pred - targets[i]) / batch.size();
    for (int j = 0; j < 5; ++j) grad_w[j] += d * x[j];
    grad_b += d;
  }
  Tensor grad = backward(state, batch, targets);
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(grad.values[j], grad_w[j], 1e-9);
  EXPECT_NEAR(grad.values[5], grad_b, 1e-9);
}

TEST(Backward, ThreadedReductionIsBitStable) {
  ModelConfig cfg;
  cfg.chip_px = 12;
  cfg.conv_layers = {{3, 3, 2}};
  cfg.fc_widths = {6, 1};
  cfg.seed = 41;
  TrainState state = init_model(cfg);
  Rng rng(42);
  std::vector<BuildingSample> batch;
  for (int i = 0; i < 9; ++i) batch.push_back(random_sample(rng, 12));
  auto targets = targets_of(batch);
  Tensor g1 = backward(state, batch, targets, 1);
  Tensor g4 = backward(state, batch, targets, 4);
  EXPECT_EQ(g1.values, g4.values);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

TEST(Train, OverfitsThirtyTwoSamples) {
  // 32 rendered buildings; chips carry the layover band, so the targets are
  // a visible function of the inputs and a compact model can memorize them
  auto geom = testutil::geom_with_range_az(45.0, 90.0);
  SceneSpec spec(geom);
  spec.seed = 5;
  spec.extent_w_m = spec.extent_h_m = 1000.0;
  spec.n_buildings = 32;
  spec.side_min_m = 10.0;
  spec.side_max_m = 22.0;
  spec.height_dist = HeightDistribution::make_uniform(5.0, 25.0);
  spec.min_spacing_m = 60.0;
  auto buildings = generate_city(spec);
  Raster amp = render_amplitude(buildings, spec);
  auto patches = tile(amp);
  FootprintIndex index = FootprintIndex::build(buildings, geom);
  ExtractOptions opts;
  opts.chip_px = 32;
  opts.city_id = "c";
  std::vector<BuildingSample> data;
  for (const auto& p : patches) {
    auto s = extract_samples(p, index, geom, opts);
    data.insert(data.end(), s.begin(), s.end());
  }
  data = deduplicate(std::move(data));
  ASSERT_EQ(data.size(), 32u);

  ModelConfig cfg;
  cfg.chip_px = 32;
  cfg.conv_layers = {{8, 5, 2}, {16, 3, 2}};
  cfg.fc_widths = {32, 1};
  cfg.seed = 51;
  TrainState state = init_model(cfg);
  TrainHyper hyper;  // default lr / batch / moments
  hyper.epochs = 2000;  // batch 32 over 32 samples = 1 step per epoch
  hyper.seed = 53;
  hyper.threads = 4;
  state = train(std::move(state), data, hyper);
  ASSERT_FALSE(state.loss_history.empty());
  EXPECT_LE(state.loss_history.size(), 2000u);
  EXPECT_LT(state.loss_history.back().second, 0.5);
}

TEST(Train, ZeroLearningRateChangesNothing) {
  ModelConfig cfg;
  cfg.chip_px = 12;
  cfg.conv_layers = {{3, 3, 2}};
  cfg.fc_widths = {6, 1};
  cfg.seed = 61;
  TrainState state = init_model(cfg);
  auto before = state.params.values;
  Rng rng(62);
  std::vector<BuildingSample> data;
  for (int i = 0; i < 8; ++i) data.push_back(random_sample(rng, 12));
  TrainHyper hyper;
  hyper.lr = 0.0;
  hyper.epochs = 3;
  hyper.batch = 8;  // full batch, so every step sees the same data
  state = train(std::move(state), data, hyper);
  EXPECT_EQ(state.params.values, before);
  ASSERT_EQ(state.loss_history.size(), 3u);
  // epoch shuffles reorder the loss summation; constant up to fp reassociation
  double l0 = state.loss_history[0].second;
  EXPECT_NEAR(state.loss_history[1].second, l0, 1e-9 * l0);
  EXPECT_NEAR(state.loss_history[2].second, l0, 1e-9 * l0);
}

TEST(Train, DeterministicPerSeed) {
  ModelConfig cfg;
  cfg.chip_px = 12;
  cfg.conv_layers = {{3, 3, 2}};
  cfg.fc_widths = {6, 1};
  cfg.seed = 71;
  Rng rng(72);
  std::vector<BuildingSample> data;
  for (int i = 0; i < 12; ++i) data.push_back(random_sample(rng, 12));
  TrainHyper hyper;
  hyper.epochs = 4;
  hyper.batch = 5;
  hyper.seed = 73;
  TrainState a = train(init_model(cfg), data, hyper);
  TrainState b = train(init_model(cfg), data, hyper);
  ASSERT_EQ(a.loss_history.size(), b.loss_history.size());
  for (size_t i = 0; i < a.loss_history.size(); ++i) {
    EXPECT_EQ(a.loss_history[i].second, b.loss_history[i].second);
  }
  EXPECT_EQ(a.params.values, b.params.values);
}

TEST(Train, DivergenceAbortsWithStepIndex) {
  ModelConfig cfg;
  cfg.chip_px = 12;
  cfg.conv_layers = {{3, 3, 2}};
  cfg.fc_widths = {6, 1};
  cfg.seed = 81;
  TrainState state = init_model(cfg);
  // blow up the final bias so predictions overflow the loss
  state.params.values.back() = 1e200;
  Rng rng(82);
  std::vector<BuildingSample> data;
  for (int i = 0; i < 4; ++i) data.push_back(random_sample(rng, 12));
  TrainHyper hyper;
  hyper.epochs = 2;
  EXPECT_THROW(train(std::move(state), data, hyper), NumericError);
}

TEST(Train, LearnsAffineFunctionOfExtraFeatures) {
  // noiseless targets that are affine in the geometric features; the fc path
  // can represent the map, so training must cut MSE by >= 100x
  ModelConfig cfg;
  cfg.chip_px = 8;
  cfg.conv_layers = {{2, 3, 2}};
  cfg.fc_widths = {16, 1};
  cfg.seed = 91;
  TrainState state = init_model(cfg);
  Rng rng(92);
  std::vector<BuildingSample> data;
  for (int i = 0; i < 256; ++i) {
    BuildingSample s = random_sample(rng, 8);
    std::fill(s.chip_amp.begin(), s.chip_amp.end(), 1.0f);  // image carries nothing
    std::fill(s.chip_mask.begin(), s.chip_mask.end(), 0.0f);
    s.target_lbbb_m = 0.8 * s.fbb_extent_u_m + 0.1 * s.fbb_extent_v_m + 4.0 * s.cos_theta + 2.0;
    data.push_back(std::move(s));
  }
  double initial = mse_loss(forward(state, data), targets_of(data));
  TrainHyper hyper;
  hyper.epochs = 120;
  hyper.seed = 93;
  state = train(std::move(state), data, hyper);
  double final_mse = mse_loss(forward(state, data), targets_of(data));
  EXPECT_LT(final_mse * 100.0, initial);
}

// ---------------------------------------------------------------------------
// predict_height
// ---------------------------------------------------------------------------

namespace {

/// Linear model that outputs fbb_extent_u_m + `offset` exactly.
TrainState offset_model(double offset) {
  ModelConfig cfg;
  cfg.chip_px = 4;
  cfg.conv_layers = {};
  cfg.fc_widths = {1};
  TrainState state = init_model(cfg);
  std::fill(state.params.values.begin(), state.params.values.end(), 0.0);
  state.params.values[2] = 1.0;  // weight on fbb_extent_u_m
  state.params.values[5] = offset;  // bias
  return state;
}

BuildingSample plain_sample(double fbb_u, double cos_theta) {
  BuildingSample s;
  s.building_id = "p";
  s.city_id = "c";
  s.chip_px = 4;
  s.chip_amp.assign(16, 0.0f);
  s.chip_mask.assign(16, 1.0f);
  s.fbb_extent_u_m = fbb_u;
  s.fbb_extent_v_m = 5.0;
  s.cos_theta = cos_theta;
  return s;
}

}  // namespace

TEST(PredictHeight, ExactExtentMeansZeroHeight) {
  TrainState state = offset_model(0.0);
  auto est = predict_height(state, plain_sample(18.0, 0.7));
  EXPECT_EQ(est.height_m, 0.0);
  EXPECT_FALSE(est.clamped);
}

TEST(PredictHeight, BuenosAiresIncidence) {
  TrainState state = offset_model(10.0);
  double cos_ba = std::cos(deg2rad(26.48));
  auto est = predict_height(state, plain_sample(22.0, cos_ba));
  EXPECT_NEAR(est.height_m, 10.0 / cos_ba, 1e-9);
  EXPECT_NEAR(est.height_m, 11.17, 0.005);
}

TEST(PredictHeight, UndershootClampsAndWarns) {
  TrainState state = offset_model(-3.0);
  auto est = predict_height(state, plain_sample(20.0, 0.7));
  EXPECT_EQ(est.height_m, 0.0);
  EXPECT_TRUE(est.clamped);
}

TEST(PredictHeight, CotFactorUsesTangent) {
  TrainState state = offset_model(10.0);
  double theta = deg2rad(30.0);
  auto est = predict_height(state, plain_sample(20.0, std::cos(theta)),
                            LayoverFactor::cot_theta);
  EXPECT_NEAR(est.height_m, 10.0 * std::tan(theta), 1e-9);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

TEST(Checkpoint, RoundTripPreservesWeightsBitExactly) {
  auto dir = testutil::make_temp_dir("ckpt");
  ModelConfig cfg;
  cfg.chip_px = 12;
  cfg.conv_layers = {{3, 3, 2}};
  cfg.fc_widths = {6, 1};
  cfg.seed = 111;
  TrainState state = init_model(cfg);
  state.step = 42;
  state.loss_history = {{1, 9.0}, {2, 4.5}, {42, 1.25}};
  save_checkpoint(state, dir / "ckpt", "f00d");
  std::string hash;
  TrainState back = load_checkpoint(dir / "ckpt", &hash);
  EXPECT_EQ(back.params.values, state.params.values);
  EXPECT_EQ(back.step, 42);
  EXPECT_EQ(hash, "f00d");
  EXPECT_EQ(back.config.chip_px, 12);
  ASSERT_EQ(back.config.conv_layers.size(), 1u);
  EXPECT_EQ(back.config.conv_layers[0].out_channels, 3);
  EXPECT_EQ(back.config.fc_widths, (std::vector<int>{6, 1}));

  write_loss_csv(state, dir / "loss.csv", "f00d");
  std::ifstream in(dir / "loss.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# config_hash=f00d");
  std::getline(in, line);
  EXPECT_EQ(line, "step,loss");
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 2), "1,");

  // corrupt length is rejected
  std::filesystem::resize_file(dir / "ckpt.bin", 8);
  EXPECT_THROW(load_checkpoint(dir / "ckpt"), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "nope"), MissingInputError);
  std::filesystem::remove_all(dir);
}
