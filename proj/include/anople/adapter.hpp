#pragma once

#include "anople/backbone.hpp"
#include "anople/prompt_stack.hpp"

#include <span>
#include <vector>

// Prompted forward passes: glue between the frozen backbone and a PromptStack.
// A null PromptStack runs the plain backbone.
namespace anople {

enum class TextBranch { normal, abnormal };

// Unit-norm 1 x embed_dim text feature for one tokenized template.
ad::Var encode_text_with_prompts(const Backbone& backbone, std::span<const int> token_ids,
                                 const PromptStack* prompts);

// view_index is 1-based; N+1 is the whole image and is the only view used at
// inference.
VisionOutput encode_image_with_prompts(const Backbone& backbone, const cv::Mat& view, const PromptStack* prompts,
                                       int view_index, std::span<const int> tap_layers = {});

struct TextFeatures {
  ad::Var normal;    // w+, 1 x embed_dim
  ad::Var abnormal;  // w-, 1 x embed_dim
};

// Encodes both templates for every class, averages over classes and
// re-normalizes the averages.
TextFeatures encode_class_text(const Backbone& backbone, const TextInputs& inputs, const PromptStack* prompts);

// Per-location mean of the listed (1-based) layers' patch tokens, then L2
// normalized: (grid*grid) x d_v.
ad::Matrix extract_intermediate_patches(const Backbone& backbone, const cv::Mat& view, std::span<const int> layers,
                                        const PromptStack* prompts);

}  // namespace anople
