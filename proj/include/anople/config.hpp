#pragma once

#include "anople/backbone.hpp"
#include "anople/dataset.hpp"
#include "anople/model.hpp"
#include "anople/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace anople {

struct BackboneSpec {
  std::string kind = "tiny";  // "tiny" | "pretrained"
  std::filesystem::path weights;
  std::filesystem::path vocab;
  int text_heads = 10;
  int vision_heads = 14;
  std::string activation = "gelu";
  int prompt_depth = 9;
  std::uint64_t seed = 0;  // tiny initialization
};

// Everything a run needs. The JSON layout groups fields into sections;
// to_json() writes the full accepted tree.
struct RunConfig {
  std::filesystem::path dataset_root;
  std::string dataset = "mvtec";  // mvtec | visa | synthetic
  std::vector<std::string> categories;
  int shots = 1;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  BackboneSpec backbone;

  int text_ctx = 3;
  int vision_ctx = 3;
  int views = 4;
  std::string coupling = "bidirectional";
  std::string view_signal = "learned";

  int epochs = 60;
  int repeats = 1;
  double lr_prompt = 1e-3;
  double lr_decoder = 2e-4;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  double warmup_epochs = 1.0;

  int view_size = 240;
  int map_size = 0;
  int decoder_hidden = 0;

  std::vector<int> memory_layers{7, 8, 9, 10};
  bool use_memory = true;
  bool prompted_memory = true;

  bool pixel_simulation = true;
  bool latent_simulation = true;
  std::string alignment = "weighted";  // weighted | mean | off
  double latent_mu = 0.0;
  double latent_sigma = 0.015;
  double label_smoothing = 0.003;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double dice_smoothing = 1.0;
  double align_temperature = 2.0;
  std::filesystem::path texture_dir;

  bool per_class = false;
  std::filesystem::path output_dir = "runs/default";

  // VisA defaults: C_t = 5, C_v = 8, memory layers 7..9.
  static RunConfig visa_defaults();

  // Throws ConfigError naming the offending field.
  void validate() const;

  BackboneConfig backbone_config() const;
  ModelConfig model_config() const;
  TrainConfig train_config(std::uint64_t seed) const;
};

nlohmann::json to_json(const RunConfig& config);
// Starts from `base` and applies the keys present in `j`. Unknown keys and
// wrongly typed values raise ConfigError with the dotted field path.
RunConfig from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);

// FNV-1a 64 over the canonical JSON dump.
std::uint64_t config_hash(const RunConfig& config);
std::string hex64(std::uint64_t v);

// Source revision baked in at build time.
const char* git_revision();

CouplingMode parse_coupling(const std::string& s);
ViewSignalMode parse_view_signal(const std::string& s);
AlignmentMode parse_alignment(const std::string& s);

}  // namespace anople
