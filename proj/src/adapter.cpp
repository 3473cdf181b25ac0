#include "anople/adapter.hpp"

#include "anople/errors.hpp"

namespace anople {

ad::Var encode_text_with_prompts(const Backbone& backbone, std::span<const int> token_ids,
                                 const PromptStack* prompts) {
  if (!prompts) return backbone.encode_text(token_ids, {});
  if (prompts->text_dim() != backbone.config().text_width) {
    throw ConfigError("prompt stack text width does not match the backbone");
  }
  const auto blocks = prompts->text_layer_prompts();
  return backbone.encode_text(token_ids, blocks);
}

VisionOutput encode_image_with_prompts(const Backbone& backbone, const cv::Mat& view, const PromptStack* prompts,
                                       int view_index, std::span<const int> tap_layers) {
  if (!prompts) return backbone.encode_image(view, {}, tap_layers);
  if (prompts->vision_dim() != backbone.config().vision_width) {
    throw ConfigError("prompt stack vision width does not match the backbone");
  }
  const auto blocks = prompts->vision_layer_prompts(view_index);
  return backbone.encode_image(view, blocks, tap_layers);
}

TextFeatures encode_class_text(const Backbone& backbone, const TextInputs& inputs, const PromptStack* prompts) {
  if (inputs.classes.empty()) throw InputError("encode_class_text: no classes");
  std::vector<ad::Var> normal, abnormal;
  for (std::size_t c = 0; c < inputs.classes.size(); ++c) {
    normal.push_back(encode_text_with_prompts(backbone, inputs.normal[c], prompts));
    abnormal.push_back(encode_text_with_prompts(backbone, inputs.abnormal[c], prompts));
  }
  if (normal.size() == 1) return {normal[0], abnormal[0]};
  return {ad::l2_normalize_rows(ad::average(normal)), ad::l2_normalize_rows(ad::average(abnormal))};
}

ad::Matrix extract_intermediate_patches(const Backbone& backbone, const cv::Mat& view, std::span<const int> layers,
                                        const PromptStack* prompts) {
  if (layers.empty()) throw InputError("extract_intermediate_patches: empty layer list");
  ad::NoGradGuard no_grad;
  const int view_index = prompts ? prompts->whole_view_index() : 1;
  const VisionOutput out = encode_image_with_prompts(backbone, view, prompts, view_index, layers);
  ad::Matrix acc = ad::Matrix::Zero(out.taps.front().rows(), out.taps.front().cols());
  for (const auto& tap : out.taps) acc += tap.value();
  acc /= static_cast<double>(out.taps.size());
  const Eigen::VectorXd norms = acc.rowwise().norm().cwiseMax(1e-12);
  return acc.array().colwise() / norms.array();
}

}  // namespace anople
