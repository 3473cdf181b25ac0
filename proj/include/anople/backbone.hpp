#pragma once

#include "anople/autograd.hpp"
#include "anople/tokenizer.hpp"

#include <opencv2/core.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace anople {

enum class Activation { gelu, quick_gelu };

struct BackboneConfig {
  int text_width = 640;    // d_t
  int vision_width = 896;  // d_v
  int embed_dim = 640;     // shared image/text space
  int text_layers = 12;
  int vision_layers = 12;
  int text_heads = 10;
  int vision_heads = 14;
  int patch_size = 16;
  int input_resolution = 240;
  int context_length = 77;
  int prompt_depth = 9;  // J
  Activation activation = Activation::gelu;
  std::array<double, 3> mean{0.48145466, 0.4578275, 0.40821073};
  std::array<double, 3> std{0.26862954, 0.26130258, 0.27577711};

  int grid() const { return input_resolution / patch_size; }
  int num_patches() const { return grid() * grid(); }

  // Throws ConfigError on an inconsistent configuration.
  void validate() const;

  // ViT-B/16+ at 240 px.
  static BackboneConfig reference();
  // Small randomly initialized encoder pair used for desk-scale runs.
  static BackboneConfig tiny();
};

struct VisionOutput {
  ad::Var cls;                // 1 x embed_dim, projected and L2-normalized
  ad::Var patches;            // (grid*grid) x d_v, final layer after ln_post, prompt slots removed
  std::vector<ad::Var> taps;  // raw block outputs for the requested layers, slots removed
};

// Frozen dual encoder with deep-prompt hooks.
//
// `layer_prompts[j]` (j < J) is injected in front of layer j+1: at the first
// layer the block is inserted as new slots, at later layers it overwrites the
// slot outputs of the previous layer. Slots beyond layer J propagate as
// ordinary tokens. An empty span means a plain forward pass. Vision slots sit
// right after [CLS]; text slots right after the start-of-text token.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual const BackboneConfig& config() const = 0;
  virtual const WordTokenizer& tokenizer() const = 0;
  // exp(learned log-scale); 1/tau of the image/text similarity softmax.
  virtual double logit_scale() const = 0;

  // `token_ids` includes start and end tokens. Returns 1 x embed_dim, unit norm.
  virtual ad::Var encode_text(std::span<const int> token_ids, std::span<const ad::Var> layer_prompts) const = 0;

  // `image` is CV_32FC3, already channel-normalized, input_resolution square.
  // `tap_layers` are 1-based block indices whose outputs are returned.
  virtual VisionOutput encode_image(const cv::Mat& image, std::span<const ad::Var> layer_prompts,
                                    std::span<const int> tap_layers = {}) const = 0;

  // FNV-1a over every frozen weight; used to assert weights never move.
  virtual std::uint64_t weights_checksum() const = 0;
};

// Randomly initialized encoder pair with the built-in word table.
std::shared_ptr<Backbone> make_tiny_backbone(const BackboneConfig& config, std::uint64_t seed);

// Loads OpenCLIP-named weights (visual.*, transformer.*, token_embedding, ...)
// from a tensor file. Widths, depths, patch size, resolution and context length
// come from the tensor shapes; heads, activation, J and normalization come from
// `overrides`.
std::shared_ptr<Backbone> load_backbone(const std::filesystem::path& weights, const std::filesystem::path& vocab,
                                        const BackboneConfig& overrides);

// Writes a backbone's weights in the same naming scheme.
void save_backbone(const Backbone& backbone, const std::filesystem::path& path);

// Flattens an image into (grid*grid) x (3*p*p) patches, channel-major inside a
// patch to match a [width, 3, p, p] convolution kernel.
ad::Matrix patchify(const cv::Mat& image, int patch_size);

}  // namespace anople
