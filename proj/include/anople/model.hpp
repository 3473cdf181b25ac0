#pragma once

#include "anople/adapter.hpp"
#include "anople/anomaly_synth.hpp"
#include "anople/backbone.hpp"
#include "anople/decoder.hpp"
#include "anople/losses.hpp"
#include "anople/memory_bank.hpp"
#include "anople/multiview.hpp"
#include "anople/prompt_stack.hpp"
#include "anople/scoring.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace anople {

struct ModelConfig {
  PromptConfig prompts;
  MultiViewConfig views;
  int decoder_hidden = 0;  // 0 selects the shared embedding width
  int map_size = 0;        // 0 selects views.view_size

  PerlinConfig perlin;
  LatentNoiseConfig latent;
  ImageLossTerms image_terms;
  FocalConfig focal;
  double dice_smoothing = 1.0;
  double align_temperature = 2.0;
  AlignmentMode alignment = AlignmentMode::weighted;
  bool pixel_losses = true;

  std::vector<int> memory_layers{7, 8, 9, 10};
  bool use_memory = true;
  bool prompted_memory = true;  // build the bank with the trained prompts in place
  std::string state_word = "abnormal";

  int resolved_map_size() const { return map_size > 0 ? map_size : views.view_size; }
  void validate(const BackboneConfig& backbone) const;
};

struct LossResult {
  ad::Var total;
  // Components sharing the total's graph; dice + focal = pixel.
  ad::Var dice, focal, image, align;
  LossBreakdown breakdown;
};

// Prompt stack + decoder + optional memory bank on top of a frozen backbone.
class AnoPLeModel {
 public:
  AnoPLeModel(std::shared_ptr<const Backbone> backbone, ModelConfig config, std::vector<std::string> class_names,
              std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Backbone& backbone() const { return *backbone_; }
  const PromptStack& prompts() const { return *prompts_; }
  PromptStack& prompts() { return *prompts_; }
  const Decoder& decoder() const { return *decoder_; }
  const std::vector<std::string>& class_names() const { return class_names_; }

  std::vector<NamedParameter> prompt_parameters() const { return prompts_->parameters(); }
  std::vector<NamedParameter> decoder_parameters() const { return decoder_->parameters(); }

  // Full training objective on one clean RGB image ([0, 1], any size). Every
  // random draw (Perlin mask, texture, latent noise) comes from `sample_seed`,
  // so equal seeds give bitwise-equal losses.
  LossResult training_loss(const cv::Mat& image, std::uint64_t sample_seed, const TextureSource& textures) const;

  // Same objective with a caller-supplied pixel anomaly and latent noise.
  LossResult training_loss(const cv::Mat& image, const cv::Mat& image_minus, const cv::Mat& mask,
                           const ad::Matrix& latent_noise) const;

  // Reference features from raw RGB shots.
  void build_memory(std::span<const cv::Mat> shots);
  const std::optional<MemoryBank>& memory() const { return memory_; }
  void set_memory(MemoryBank bank) { memory_ = std::move(bank); }

  // Whole-view inference. Memory fusion applies when a bank is present and
  // enabled in the config.
  ScoreReport predict(const cv::Mat& image, const std::string& image_id = {}) const;
  // Variant reusing text features computed once for a whole test set.
  ScoreReport predict(const cv::Mat& image, const std::string& image_id, const TextFeatures& text) const;

  // Unit-norm text features under the current prompts, no gradient.
  TextFeatures text_features() const;

  void save(const std::filesystem::path& path) const;
  // Restores prompts, decoder and (when stored alongside) metadata checks.
  void load(const std::filesystem::path& path);

 private:
  std::shared_ptr<const Backbone> backbone_;
  ModelConfig config_;
  std::vector<std::string> class_names_;
  TextInputs text_inputs_;
  std::unique_ptr<PromptStack> prompts_;
  std::unique_ptr<Decoder> decoder_;
  std::optional<MemoryBank> memory_;
};

}  // namespace anople
