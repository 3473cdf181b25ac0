#include "anople/adapter.hpp"
#include "anople/prompt_stack.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace anople;

namespace {

PromptStack make_stack(CouplingMode mode, ViewSignalMode signal = ViewSignalMode::learned, std::uint64_t seed = 1) {
  PromptConfig pc;
  pc.coupling = mode;
  pc.view_signal = signal;
  std::mt19937_64 rng(seed);
  return PromptStack(pc, BackboneConfig::tiny(), rng);
}

bool rows_zero(const ad::Matrix& m, Eigen::Index start, Eigen::Index count) {
  return m.middleRows(start, count).cwiseAbs().maxCoeff() == 0.0;
}

}  // namespace

TEST(PromptStack, CoupledBlockShapes) {
  const auto bc = BackboneConfig::tiny();
  const auto s = make_stack(CouplingMode::bidirectional);
  EXPECT_EQ(s.depth(), bc.prompt_depth);
  const auto blocks = s.couple_layer(1);
  EXPECT_EQ(blocks.text.rows(), 6);
  EXPECT_EQ(blocks.text.cols(), bc.text_width);
  EXPECT_EQ(blocks.vision.rows(), 6);
  EXPECT_EQ(blocks.vision.cols(), bc.vision_width);
  EXPECT_EQ(s.vision_layer_prompts(1)[0].rows(), 7);  // view signal row in front
  EXPECT_EQ(s.text_layer_prompts().size(), static_cast<std::size_t>(bc.prompt_depth));
  EXPECT_THROW(s.couple_layer(0), InputError);
  EXPECT_THROW(s.couple_layer(bc.prompt_depth + 1), InputError);
}

TEST(PromptStack, BlocksCarryContextThenProjection) {
  const auto s = make_stack(CouplingMode::bidirectional);
  const auto blocks = s.couple_layer(2);
  EXPECT_EQ(blocks.text.value().topRows(3), s.text_context(2).value());
  EXPECT_EQ(blocks.vision.value().topRows(3), s.vision_context(2).value());
}

TEST(PromptStack, CouplingModesMaskProjectedRows) {
  for (auto [mode, text_zero, vision_zero] :
       {std::tuple{CouplingMode::bidirectional, false, false}, std::tuple{CouplingMode::independent, true, true},
        std::tuple{CouplingMode::text_to_vision, true, false}, std::tuple{CouplingMode::vision_to_text, false, true}}) {
    const auto b = make_stack(mode).couple_layer(1);
    EXPECT_EQ(rows_zero(b.text.value(), 3, 3), text_zero);
    EXPECT_EQ(rows_zero(b.vision.value(), 3, 3), vision_zero);
  }
  EXPECT_EQ(make_stack(CouplingMode::independent).parameters().size(),
            make_stack(CouplingMode::bidirectional).parameters().size() - 4);
}

TEST(PromptStack, ViewSignalDiffersOnlyInFirstRow) {
  const auto s = make_stack(CouplingMode::bidirectional);
  const auto a = s.vision_layer_prompts(1), b = s.vision_layer_prompts(s.whole_view_index());
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_NE(a[j].value().row(0), b[j].value().row(0));
    EXPECT_EQ(a[j].value().bottomRows(6), b[j].value().bottomRows(6));
  }
}

TEST(PromptStack, ZeroSignalIsViewInvariant) {
  const auto s = make_stack(CouplingMode::bidirectional, ViewSignalMode::zero);
  const auto backbone = make_tiny_backbone(BackboneConfig::tiny(), 2);
  const cv::Mat view = oracle::gradient_image(32, 32, 1);
  const auto ref = encode_image_with_prompts(*backbone, view, &s, 1).cls.value();
  for (int v = 2; v <= s.num_views(); ++v) {
    EXPECT_EQ(encode_image_with_prompts(*backbone, view, &s, v).cls.value(), ref);
  }
  for (const auto& p : s.parameters()) EXPECT_NE(p.name, "prompt.view_signal");
}

TEST(PromptStack, VisionLossReachesTextContextThroughCoupling) {
  const auto backbone = make_tiny_backbone(BackboneConfig::tiny(), 2);
  const cv::Mat view = oracle::gradient_image(32, 32, 1);
  for (auto mode : {CouplingMode::bidirectional, CouplingMode::independent}) {
    const auto s = make_stack(mode);
    const ad::Var loss = ad::sum(encode_image_with_prompts(*backbone, view, &s, 1).cls);
    ad::backward(loss);
    const auto& g = s.text_context(1).grad();
    const double norm = g.size() ? g.norm() : 0.0;
    if (mode == CouplingMode::bidirectional) EXPECT_GT(norm, 0.0);
    else EXPECT_EQ(norm, 0.0);
  }
}

TEST(PromptStack, EveryParameterReceivesGradient) {
  const auto backbone = make_tiny_backbone(BackboneConfig::tiny(), 2);
  const auto s = make_stack(CouplingMode::bidirectional);
  const auto inputs = build_text_inputs({"carpet"}, backbone->tokenizer());
  const TextFeatures t = encode_class_text(*backbone, inputs, &s);
  std::vector<ad::Var> cls;
  for (int v = 1; v <= s.num_views(); ++v) {
    cls.push_back(encode_image_with_prompts(*backbone, oracle::gradient_image(32, 32, v), &s, v).cls);
  }
  const ad::Var loss = ad::add(ad::sum(ad::matmul_nt(ad::average(cls), t.abnormal)), ad::sum(t.normal));
  ad::backward(loss);
  for (const auto& p : s.parameters()) {
    ASSERT_EQ(p.var.grad().size(), p.var.value().size()) << p.name;
    EXPECT_GT(p.var.grad().norm(), 0.0) << p.name;
  }
}

TEST(PromptStack, SaveLoadRoundTrip) {
  const auto a = make_stack(CouplingMode::bidirectional, ViewSignalMode::learned, 5);
  auto b = make_stack(CouplingMode::bidirectional, ViewSignalMode::learned, 6);
  TensorFile f;
  a.save(f);
  b.load(f);
  EXPECT_EQ(b.couple_layer(3).vision.value(), a.couple_layer(3).vision.value());
  EXPECT_EQ(b.view_signal().value(), a.view_signal().value());
}

TEST(TextInputs, TemplatesAndUnknownClass) {
  const auto tok = WordTokenizer::builtin();
  const auto in = build_text_inputs({"metal_nut"}, tok, "damaged");
  ASSERT_EQ(in.normal[0].size(), 4u);  // sot metal nut eot
  ASSERT_EQ(in.abnormal[0].size(), 5u);
  EXPECT_EQ(in.normal[0].front(), tok.sot());
  EXPECT_EQ(in.abnormal[0].back(), tok.eot());
  try {
    build_text_inputs({"bottle", "zeppelin"}, tok);
    FAIL();
  } catch (const TokenizerError& e) {
    EXPECT_NE(std::string(e.what()).find("zeppelin"), std::string::npos);
  }
  EXPECT_EQ(TextTemplate{"cable"}.abnormal_text(), "abnormal cable");
}
