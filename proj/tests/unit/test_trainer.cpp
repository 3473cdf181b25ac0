#include "anople/config.hpp"
#include "anople/dataset.hpp"
#include "anople/errors.hpp"
#include "anople/eval.hpp"
#include "anople/image_io.hpp"
#include "anople/trainer.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <json.hpp>

using namespace anople;

TEST(Sgd, MatchesHandComputedMomentumAndDecay) {
  ad::Var p = ad::parameter(ad::Matrix::Constant(1, 1, 1.0));
  Sgd opt({{{{"p", p}}, 0.1}}, 0.9, 0.01);
  // Step 1: g = 2 + 0.01 * 1 = 2.01, buf = g, p = 1 - 0.1 * 2.01 = 0.799.
  p.zero_grad();
  ad::backward(ad::scale(p, 2.0));
  opt.step();
  EXPECT_NEAR(p.value()(0, 0), 0.799, 1e-15);
  // Step 2 at half rate: g = 2 + 0.00799, buf = 0.9 * 2.01 + g, p -= 0.05 * buf.
  opt.zero_grad();
  ad::backward(ad::scale(p, 2.0));
  opt.step(0.5);
  const double buf = 0.9 * 2.01 + 2.00799;
  EXPECT_NEAR(p.value()(0, 0), 0.799 - 0.05 * buf, 1e-15);
}

TEST(Sgd, MissingGradientStillAppliesDecay) {
  ad::Var p = ad::parameter(ad::Matrix::Constant(1, 2, 2.0));
  Sgd opt({{{{"p", p}}, 1.0}}, 0.0, 0.5);
  opt.step();
  EXPECT_EQ(p.value()(0, 1), 1.0);
}

TEST(Warmup, LinearRampFromZero) {
  EXPECT_EQ(warmup_factor(0.0, 2.0), 0.0);
  EXPECT_EQ(warmup_factor(0.5, 2.0), 0.25);
  EXPECT_EQ(warmup_factor(2.0, 2.0), 1.0);
  EXPECT_EQ(warmup_factor(5.0, 2.0), 1.0);
  EXPECT_EQ(warmup_factor(0.0, 0.0), 1.0);
}

TEST(TrainConfig, DefaultsAndValidation) {
  const TrainConfig c;
  EXPECT_EQ(c.epochs, 60);
  EXPECT_EQ(c.lr_prompt, 1e-3);
  EXPECT_EQ(c.lr_decoder, 2e-4);
  EXPECT_EQ(c.momentum, 0.9);
  EXPECT_EQ(c.weight_decay, 1e-5);
  TrainConfig bad;
  bad.momentum = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.epochs = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
}

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.views.view_size = 16;
  m.memory_layers = {1, 2};
  return m;
}

std::shared_ptr<Backbone> tiny_backbone() {
  auto c = BackboneConfig::tiny();
  c.input_resolution = 16;
  c.prompt_depth = 2;
  return make_tiny_backbone(c, 0);
}

}  // namespace

TEST(Train, ZeroEpochsLeaveParametersUntouched) {
  AnoPLeModel model(tiny_backbone(), tiny_model(), {"dots"}, 4);
  std::vector<ad::Matrix> before;
  for (const auto& p : model.prompt_parameters()) before.push_back(p.var.value());
  for (const auto& p : model.decoder_parameters()) before.push_back(p.var.value());
  TrainConfig tc;
  tc.epochs = 0;
  const cv::Mat shot = oracle::gradient_image(32, 32, 1);
  const auto h = train(model, std::span(&shot, 1), TextureSource::self_augmented(), tc);
  EXPECT_TRUE(h.steps.empty());
  std::size_t i = 0;
  for (const auto& p : model.prompt_parameters()) EXPECT_EQ(p.var.value(), before[i++]);
  for (const auto& p : model.decoder_parameters()) EXPECT_EQ(p.var.value(), before[i++]);
}

TEST(Train, HistoryShapeWarmupAndDeterminism) {
  const std::vector<cv::Mat> shots{oracle::gradient_image(32, 32, 1), oracle::gradient_image(32, 32, 2)};
  TrainConfig tc;
  tc.epochs = 3;
  tc.repeats = 2;
  tc.seed = 9;
  auto run = [&] {
    AnoPLeModel model(tiny_backbone(), tiny_model(), {"dots"}, 4);
    std::vector<StepRecord> seen;
    const auto h = train(model, shots, TextureSource::self_augmented(), tc, [&](const StepRecord& r) { seen.push_back(r); });
    EXPECT_EQ(seen.size(), h.steps.size());
    return std::pair{h, model.decoder_parameters()[0].var.value()};
  };
  const auto [h1, w1] = run();
  const auto [h2, w2] = run();
  ASSERT_EQ(h1.steps.size(), 12u);
  ASSERT_EQ(h1.epoch_mean_loss.size(), 3u);
  EXPECT_DOUBLE_EQ(h1.steps[0].lr_factor, 0.25);
  EXPECT_DOUBLE_EQ(h1.steps[3].lr_factor, 1.0);
  EXPECT_EQ(h1.steps[11].lr_factor, 1.0);
  for (std::size_t i = 0; i < h1.steps.size(); ++i) EXPECT_EQ(h1.steps[i].loss.total, h2.steps[i].loss.total);
  EXPECT_EQ(w1, w2);
  EXPECT_THROW(train(*std::make_unique<AnoPLeModel>(tiny_backbone(), tiny_model(), std::vector<std::string>{"dots"}, 1),
                     {}, TextureSource::self_augmented(), tc),
               ConfigError);
}

TEST(Train, MetricsLinesAreJson) {
  oracle::TempDir dir("metrics");
  StepRecord r{2, 7, 0.5, {0.1, 0.2, 0.3, 0.6}};
  append_metrics_line(dir.path() / "m.jsonl", r);
  append_metrics_line(dir.path() / "m.jsonl", r);
  std::ifstream in(dir.path() / "m.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<int>(), 7);
    EXPECT_EQ(j.at("l_total").get<double>(), 0.6);
    EXPECT_TRUE(j.contains("l_pixel") && j.contains("l_img") && j.contains("l_align") && j.contains("lr_factor"));
    ++n;
  }
  EXPECT_EQ(n, 2);
}

// Default recipe on the synthetic texture family: the epoch-average loss
// curve, smoothed over blocks of ten epochs, must fall block after block.
TEST(Train, DefaultRecipeLossCurveDecreases) {
  oracle::TempDir dir("curve");
  SyntheticDatasetConfig s;
  s.train_count = 8;
  s.test_count = 2;
  s.seed = 7;
  generate_synthetic_dataset(dir.path(), s);
  RunConfig rc;
  rc.dataset = "synthetic";
  rc.backbone.prompt_depth = 3;
  rc.view_size = 32;
  rc.memory_layers = {2, 3};
  const auto backbone = make_tiny_backbone(rc.backbone_config(), rc.backbone.seed);
  const auto split = discover_dataset(dir.path(), DatasetLayout::mvtec, {"weave"}).front();
  const cv::Mat shot = read_rgb(split.train[sample_shots(split.train.size(), 1, shot_seed(0, 0)).front()].image);

  AnoPLeModel model(backbone, rc.model_config(), {"weave"}, 0);
  const auto h = train(model, std::span(&shot, 1), TextureSource::self_augmented(), rc.train_config(0));
  ASSERT_EQ(h.epoch_mean_loss.size(), 60u);
  std::vector<double> blocks;
  for (int b = 0; b < 6; ++b) {
    double sum = 0.0;
    for (int e = 0; e < 10; ++e) sum += h.epoch_mean_loss[b * 10 + e];
    blocks.push_back(sum / 10.0);
  }
  for (std::size_t b = 1; b < blocks.size(); ++b) {
    EXPECT_LT(blocks[b], blocks[b - 1]) << "block " << b;
    std::cout << "block " << b - 1 << " mean " << blocks[b - 1] << "\n";
  }
  std::cout << "block 5 mean " << blocks[5] << "\n";
}
