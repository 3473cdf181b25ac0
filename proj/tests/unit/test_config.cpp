#include "anople/config.hpp"
#include "anople/errors.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace anople;
using nlohmann::json;

namespace {

std::string error_of(const json& j) {
  try {
    from_json(j).validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(RunConfig, DefaultsFollowTheTrainingRecipe) {
  const RunConfig c;
  EXPECT_EQ(c.epochs, 60);
  EXPECT_EQ(c.lr_prompt, 0.001);
  EXPECT_EQ(c.lr_decoder, 0.0002);
  EXPECT_EQ(c.momentum, 0.9);
  EXPECT_EQ(c.weight_decay, 1e-5);
  EXPECT_EQ(c.backbone.prompt_depth, 9);
  EXPECT_EQ(c.text_ctx, 3);
  EXPECT_EQ(c.vision_ctx, 3);
  EXPECT_EQ(c.views, 4);
  EXPECT_EQ(c.memory_layers, (std::vector<int>{7, 8, 9, 10}));
  EXPECT_EQ(c.align_temperature, 2.0);
  EXPECT_EQ(c.seeds.size(), 5u);
  const RunConfig v = RunConfig::visa_defaults();
  EXPECT_EQ(v.text_ctx, 5);
  EXPECT_EQ(v.vision_ctx, 8);
  EXPECT_EQ(v.memory_layers, (std::vector<int>{7, 8, 9}));
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c;
  c.categories = {"bottle", "screw"};
  c.coupling = "independent";
  c.epochs = 7;
  c.memory_layers = {2, 3};
  c.texture_dir = "/tmp/dtd";
  const RunConfig back = from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  c.epochs = 8;
  EXPECT_NE(config_hash(back), config_hash(c));
  EXPECT_EQ(hex64(255), "00000000000000ff");
}

TEST(RunConfig, SchemaErrorsNameTheField) {
  EXPECT_NE(error_of({{"training", {{"learning_rate", 1}}}}).find("training.learning_rate"), std::string::npos);
  EXPECT_NE(error_of({{"bogus", 1}}).find("bogus"), std::string::npos);
  EXPECT_NE(error_of({{"training", {{"epochs", "many"}}}}).find("training.epochs"), std::string::npos);
  EXPECT_NE(error_of({{"prompts", {{"views", 5}}}}).find("prompts.views"), std::string::npos);
  EXPECT_NE(error_of({{"prompts", {{"coupling", "sideways"}}}}).find("sideways"), std::string::npos);
  EXPECT_NE(error_of({{"shots", 0}}).find("shots"), std::string::npos);
  EXPECT_NE(error_of({{"dataset", {{"name", "imagenet"}}}}).find("dataset.name"), std::string::npos);
}

TEST(RunConfig, FileLoadingUsesVisaBaseForVisa) {
  oracle::TempDir dir("cfg");
  const auto path = dir.path() / "run.json";
  std::ofstream(path) << R"({"dataset": {"name": "visa", "root": "/data/visa"}, "shots": 2})";
  const RunConfig c = load_run_config(path);
  EXPECT_EQ(c.dataset, "visa");
  EXPECT_EQ(c.vision_ctx, 8);
  EXPECT_EQ(c.shots, 2);
  std::ofstream(dir.path() / "broken.json") << "{not json";
  EXPECT_THROW(load_run_config(dir.path() / "broken.json"), ConfigError);
}

TEST(RunConfig, DerivedConfigs) {
  RunConfig c;
  c.backbone.kind = "tiny";
  c.view_size = 48;
  c.views = 9;
  const auto b = c.backbone_config();
  EXPECT_EQ(b.input_resolution, 48);
  const auto m = c.model_config();
  EXPECT_EQ(m.views.grid, 3);
  EXPECT_EQ(m.prompts.views, 9);
  EXPECT_EQ(c.train_config(4).seed, 4u);
  EXPECT_EQ(parse_coupling("text_to_vision"), CouplingMode::text_to_vision);
  EXPECT_EQ(parse_view_signal("zero"), ViewSignalMode::zero);
  EXPECT_THROW(parse_alignment("maybe"), ConfigError);
}
