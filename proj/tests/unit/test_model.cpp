#include "anople/dataset.hpp"
#include "anople/errors.hpp"
#include "anople/model.hpp"
#include "anople/trainer.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace anople;

namespace {

std::shared_ptr<Backbone> backbone16() {
  auto c = BackboneConfig::tiny();
  c.input_resolution = 16;
  c.prompt_depth = 2;
  return make_tiny_backbone(c, 1);
}

ModelConfig config16() {
  ModelConfig m;
  m.views.view_size = 16;
  m.memory_layers = {1, 2};
  return m;
}

}  // namespace

TEST(Model, ValidatesAgainstBackbone) {
  ModelConfig bad = config16();
  bad.prompts.views = 9;  // grid stays 2
  EXPECT_THROW(AnoPLeModel(backbone16(), bad, {"dots"}, 0), ConfigError);
  bad = config16();
  bad.views.view_size = 32;
  EXPECT_THROW(AnoPLeModel(backbone16(), bad, {"dots"}, 0), ConfigError);
  EXPECT_THROW(AnoPLeModel(backbone16(), config16(), {"unobtainium"}, 0), TokenizerError);
}

TEST(Model, TrainingLossIsSeedDeterministicAndDecomposes) {
  const AnoPLeModel model(backbone16(), config16(), {"dots"}, 2);
  const cv::Mat img = oracle::gradient_image(40, 40, 3);
  const auto tex = TextureSource::self_augmented();
  const LossResult a = model.training_loss(img, 11, tex), b = model.training_loss(img, 11, tex);
  EXPECT_EQ(a.total.item(), b.total.item());
  EXPECT_NE(a.total.item(), model.training_loss(img, 12, tex).total.item());
  EXPECT_NEAR(a.breakdown.total, a.breakdown.pixel + a.breakdown.image + a.breakdown.align, 1e-12);
  EXPECT_NEAR(a.breakdown.pixel, a.dice.item() + a.focal.item(), 1e-12);
  EXPECT_EQ(a.breakdown.image, a.image.item());
  EXPECT_GE(a.breakdown.align, 0.0);
  EXPECT_LE(a.breakdown.align, 2.0);
}

TEST(Model, DisabledTermsDropOut) {
  ModelConfig m = config16();
  m.pixel_losses = false;
  m.alignment = AlignmentMode::off;
  m.image_terms.pixel_space = false;
  const AnoPLeModel model(backbone16(), m, {"dots"}, 2);
  const LossResult r = model.training_loss(oracle::gradient_image(32, 32, 1), 5, TextureSource::self_augmented());
  EXPECT_EQ(r.breakdown.pixel, 0.0);
  EXPECT_EQ(r.breakdown.align, 0.0);
  EXPECT_GT(r.breakdown.image, 0.0);
}

TEST(Model, GradientsMatchFiniteDifferencesOnSmallConfig) {
  const auto backbone = make_tiny_backbone(oracle::gradcheck_backbone(), 2);
  const AnoPLeModel model(backbone, oracle::gradcheck_model(), {"grid"}, 1);
  const auto entries = oracle::check_model_gradients(model, oracle::gradcheck_inputs(8, 6));
  for (const auto& e : entries) EXPECT_LT(e.relative_error, 1e-4) << e.loss << " / " << e.parameter;
}

TEST(Model, PredictShapesBoundsAndMemoryFusion) {
  AnoPLeModel model(backbone16(), config16(), {"dots"}, 2);
  const cv::Mat img = oracle::gradient_image(50, 30, 4);
  const ScoreReport plain = model.predict(img, "a");
  EXPECT_EQ(plain.map.source, MapSource::decoder);
  EXPECT_EQ(plain.map.values.rows(), 16);
  EXPECT_GE(plain.map.values.minCoeff(), kScoreEpsilon);
  EXPECT_LE(plain.map.values.maxCoeff(), 1.0);
  EXPECT_DOUBLE_EQ(plain.score, harmonic(plain.image_probability, plain.map_max));

  const std::vector<cv::Mat> shots{img};
  model.build_memory(shots);
  const ScoreReport fused = model.predict(img, "a");
  EXPECT_EQ(fused.map.source, MapSource::fused);
  EXPECT_EQ(fused.image_id, "a");
  // The shot itself has zero memory distance, so the fused map sits at the floor.
  EXPECT_LT(fused.map_max, 1e-5);
  EXPECT_EQ(model.predict(img, "a").score, fused.score);
}

TEST(Model, SaveLoadRestoresPredictions) {
  oracle::TempDir dir("model");
  const auto bb = backbone16();
  AnoPLeModel a(bb, config16(), {"dots"}, 2);
  TrainConfig tc;
  tc.epochs = 2;
  const cv::Mat shot = oracle::gradient_image(32, 32, 8);
  train(a, std::span(&shot, 1), TextureSource::self_augmented(), tc);
  a.save(dir.path() / "ck.safetensors");
  AnoPLeModel b(bb, config16(), {"dots"}, 99);
  b.load(dir.path() / "ck.safetensors");
  const cv::Mat probe = oracle::gradient_image(32, 32, 9);
  EXPECT_EQ(a.predict(probe).score, b.predict(probe).score);
  AnoPLeModel other_class(bb, config16(), {"stripes"}, 0);
  EXPECT_THROW(other_class.load(dir.path() / "ck.safetensors"), ConfigError);
}

// A training shot scores below the same shot with a pasted synthetic defect.
TEST(Model, NormalShotScoresBelowItsDefectiveCopy) {
  oracle::TempDir dir("paired");
  SyntheticDatasetConfig s;
  s.train_count = 4;
  s.test_count = 2;
  s.seed = 7;
  generate_synthetic_dataset(dir.path(), s);
  auto bc = BackboneConfig::tiny();
  bc.prompt_depth = 3;
  const auto bb = make_tiny_backbone(bc, 0);
  ModelConfig mc;
  mc.views.view_size = 32;
  mc.memory_layers = {2, 3};
  AnoPLeModel model(bb, mc, {"weave"}, 0);
  std::mt19937_64 rng(3);
  const cv::Mat shot = synthetic_normal("weave", 64, rng);
  TrainConfig tc;
  tc.epochs = 10;
  train(model, std::span(&shot, 1), TextureSource::self_augmented(), tc);
  const std::vector<cv::Mat> shots{shot};
  model.build_memory(shots);

  cv::Mat defect = shot.clone();
  defect(cv::Rect(20, 24, 14, 12)).setTo(cv::Scalar(0.95, 0.1, 0.1));
  EXPECT_LT(model.predict(shot).score, model.predict(defect).score);
}
