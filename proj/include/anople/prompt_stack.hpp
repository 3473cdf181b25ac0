#pragma once

#include "anople/autograd.hpp"
#include "anople/backbone.hpp"
#include "anople/tensor_io.hpp"

#include <random>
#include <string>
#include <vector>

namespace anople {

// Which cross-modal projections are live. Masked projections contribute
// zero rows of the same shape, so slot layout is identical across modes.
enum class CouplingMode { bidirectional, text_to_vision, vision_to_text, independent };

enum class ViewSignalMode {
  learned,  // one trainable row per view
  zero,     // row present but frozen at zero (view-invariant)
  off,      // no signal row at all
};

struct PromptConfig {
  int text_ctx = 3;    // C_t
  int vision_ctx = 3;  // C_v
  int views = 4;       // N sub-crops; view N+1 is the whole image
  CouplingMode coupling = CouplingMode::bidirectional;
  ViewSignalMode view_signal = ViewSignalMode::learned;
  double init_std = 0.02;

  void validate() const;
};

struct CoupledBlocks {
  ad::Var text;    // (C_t + C_v) x d_t : [P_t ; f_v->t(P_v)]
  ad::Var vision;  // (C_v + C_t) x d_v : [P_v ; f_t->v(P_t)]
};

// All learnable prompt state: per-layer context vectors for both towers, the
// two shared cross-modal projections and the multi-view signal.
class PromptStack {
 public:
  PromptStack(const PromptConfig& config, const BackboneConfig& backbone, std::mt19937_64& rng);

  const PromptConfig& config() const { return config_; }
  int depth() const { return depth_; }
  int text_dim() const { return text_dim_; }
  int vision_dim() const { return vision_dim_; }
  int num_views() const { return config_.views + 1; }
  int whole_view_index() const { return config_.views + 1; }

  // 1 <= j <= J.
  CoupledBlocks couple_layer(int j) const;
  // Prepends row c[view_index] (1-based) unless the signal is off.
  ad::Var attach_view_signal(const ad::Var& vision_block, int view_index) const;

  // One block per prompted layer, ready for Backbone::encode_*.
  std::vector<ad::Var> text_layer_prompts() const;
  std::vector<ad::Var> vision_layer_prompts(int view_index) const;

  // Trainable tensors only (masked projections and frozen signals excluded).
  std::vector<NamedParameter> parameters() const;

  const ad::Var& text_context(int j) const { return text_ctx_.at(j - 1); }
  const ad::Var& vision_context(int j) const { return vision_ctx_.at(j - 1); }
  const ad::Var& view_signal() const { return signal_; }
  ad::Var& text_to_vision_weight() { return t2v_w_; }
  ad::Var& vision_to_text_weight() { return v2t_w_; }

  void save(TensorFile& file) const;
  // Restores values saved by save(); shapes must match this stack.
  void load(const TensorFile& file);

 private:
  ad::Var project(const ad::Var& x, const ad::Var& w, const ad::Var& b, bool live, int out_dim) const;
  bool text_to_vision_live() const;
  bool vision_to_text_live() const;

  PromptConfig config_;
  int depth_;
  int text_dim_;
  int vision_dim_;
  std::vector<ad::Var> text_ctx_;    // J x (C_t x d_t)
  std::vector<ad::Var> vision_ctx_;  // J x (C_v x d_v)
  ad::Var t2v_w_, t2v_b_;            // [d_v x d_t], [1 x d_v]
  ad::Var v2t_w_, v2t_b_;            // [d_t x d_v], [1 x d_t]
  ad::Var signal_;                   // (N+1) x d_v
};

// Text templates: the normal prompt is the bare class name, the abnormal
// prompt prefixes a single state word.
struct TextTemplate {
  std::string class_name;
  std::string state_word = "abnormal";

  std::string normal_text() const;
  std::string abnormal_text() const;
};

struct TextInputs {
  std::vector<std::string> classes;
  std::vector<std::vector<int>> normal;    // [sot, words..., eot] per class
  std::vector<std::vector<int>> abnormal;
};

// Tokenizes both templates for every class. Unknown words raise
// TokenizerError naming the offending class.
TextInputs build_text_inputs(const std::vector<std::string>& class_names, const WordTokenizer& tokenizer,
                             const std::string& state_word = "abnormal");

}  // namespace anople
