#include "anople/prompt_stack.hpp"

#include "anople/errors.hpp"

#include <cmath>

namespace anople {

using ad::Matrix;
using ad::Var;

void PromptConfig::validate() const {
  if (text_ctx < 0 || vision_ctx < 0) throw ConfigError("context lengths must be non-negative");
  if (views < 1) throw ConfigError("number of sub-views must be at least 1");
  if (!(init_std >= 0)) throw ConfigError("prompt init std must be non-negative");
}

namespace {

Matrix gaussian(Eigen::Index r, Eigen::Index c, double std, std::mt19937_64& rng) {
  Matrix m(r, c);
  std::normal_distribution<double> dist(0.0, std);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std > 0 ? dist(rng) : 0.0;
  return m;
}

// nn.Linear default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
Matrix linear_init(Eigen::Index r, Eigen::Index c, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace

PromptStack::PromptStack(const PromptConfig& config, const BackboneConfig& backbone, std::mt19937_64& rng)
    : config_(config),
      depth_(backbone.prompt_depth),
      text_dim_(backbone.text_width),
      vision_dim_(backbone.vision_width) {
  config_.validate();
  backbone.validate();
  for (int j = 0; j < depth_; ++j) {
    text_ctx_.push_back(ad::parameter(gaussian(config_.text_ctx, text_dim_, config_.init_std, rng)));
    vision_ctx_.push_back(ad::parameter(gaussian(config_.vision_ctx, vision_dim_, config_.init_std, rng)));
  }
  t2v_w_ = ad::parameter(linear_init(vision_dim_, text_dim_, text_dim_, rng));
  t2v_b_ = ad::parameter(linear_init(1, vision_dim_, text_dim_, rng));
  v2t_w_ = ad::parameter(linear_init(text_dim_, vision_dim_, vision_dim_, rng));
  v2t_b_ = ad::parameter(linear_init(1, text_dim_, vision_dim_, rng));
  const bool learned = config_.view_signal == ViewSignalMode::learned;
  Matrix signal = learned ? gaussian(num_views(), vision_dim_, config_.init_std, rng)
                          : Matrix::Zero(num_views(), vision_dim_);
  signal_ = Var(std::move(signal), learned);
}

bool PromptStack::text_to_vision_live() const {
  return config_.coupling == CouplingMode::bidirectional || config_.coupling == CouplingMode::text_to_vision;
}

bool PromptStack::vision_to_text_live() const {
  return config_.coupling == CouplingMode::bidirectional || config_.coupling == CouplingMode::vision_to_text;
}

Var PromptStack::project(const Var& x, const Var& w, const Var& b, bool live, int out_dim) const {
  if (!live) return ad::constant(Matrix::Zero(x.rows(), out_dim));
  return ad::linear(x, w, b);
}

CoupledBlocks PromptStack::couple_layer(int j) const {
  if (j < 1 || j > depth_) throw InputError("couple_layer: layer index out of [1, J]");
  const Var& pt = text_ctx_[j - 1];
  const Var& pv = vision_ctx_[j - 1];
  const Var text_parts[] = {pt, project(pv, v2t_w_, v2t_b_, vision_to_text_live(), text_dim_)};
  const Var vision_parts[] = {pv, project(pt, t2v_w_, t2v_b_, text_to_vision_live(), vision_dim_)};
  return {ad::concat_rows(text_parts), ad::concat_rows(vision_parts)};
}

Var PromptStack::attach_view_signal(const Var& vision_block, int view_index) const {
  if (view_index < 1 || view_index > num_views()) {
    throw InputError("view index " + std::to_string(view_index) + " outside [1, " + std::to_string(num_views()) + "]");
  }
  if (config_.view_signal == ViewSignalMode::off) return vision_block;
  const Var parts[] = {ad::slice_rows(signal_, view_index - 1, 1), vision_block};
  return ad::concat_rows(parts);
}

std::vector<Var> PromptStack::text_layer_prompts() const {
  std::vector<Var> out;
  out.reserve(depth_);
  for (int j = 1; j <= depth_; ++j) out.push_back(couple_layer(j).text);
  return out;
}

std::vector<Var> PromptStack::vision_layer_prompts(int view_index) const {
  std::vector<Var> out;
  out.reserve(depth_);
  for (int j = 1; j <= depth_; ++j) out.push_back(attach_view_signal(couple_layer(j).vision, view_index));
  return out;
}

std::vector<NamedParameter> PromptStack::parameters() const {
  std::vector<NamedParameter> ps;
  for (int j = 0; j < depth_; ++j) {
    if (config_.text_ctx > 0) ps.push_back({"prompt.text_ctx." + std::to_string(j + 1), text_ctx_[j]});
    if (config_.vision_ctx > 0) ps.push_back({"prompt.vision_ctx." + std::to_string(j + 1), vision_ctx_[j]});
  }
  if (text_to_vision_live() && config_.text_ctx > 0) {
    ps.push_back({"prompt.text_to_vision.weight", t2v_w_});
    ps.push_back({"prompt.text_to_vision.bias", t2v_b_});
  }
  if (vision_to_text_live() && config_.vision_ctx > 0) {
    ps.push_back({"prompt.vision_to_text.weight", v2t_w_});
    ps.push_back({"prompt.vision_to_text.bias", v2t_b_});
  }
  if (config_.view_signal == ViewSignalMode::learned) ps.push_back({"prompt.view_signal", signal_});
  return ps;
}

void PromptStack::save(TensorFile& file) const {
  for (int j = 0; j < depth_; ++j) {
    file.tensors["prompt.text_ctx." + std::to_string(j + 1)] = TensorRecord::from_matrix(text_ctx_[j].value());
    file.tensors["prompt.vision_ctx." + std::to_string(j + 1)] = TensorRecord::from_matrix(vision_ctx_[j].value());
  }
  file.tensors["prompt.text_to_vision.weight"] = TensorRecord::from_matrix(t2v_w_.value());
  file.tensors["prompt.text_to_vision.bias"] = TensorRecord::from_matrix(t2v_b_.value());
  file.tensors["prompt.vision_to_text.weight"] = TensorRecord::from_matrix(v2t_w_.value());
  file.tensors["prompt.vision_to_text.bias"] = TensorRecord::from_matrix(v2t_b_.value());
  file.tensors["prompt.view_signal"] = TensorRecord::from_matrix(signal_.value());
}

void PromptStack::load(const TensorFile& file) {
  auto restore = [&file](const std::string& name, Var& v) {
    const auto& rec = file.at(name);
    if (rec.data.rows() != v.rows() || rec.data.cols() != v.cols()) {
      throw FormatError("checkpoint tensor '" + name + "' has the wrong shape");
    }
    v.mutable_value() = rec.data;
  };
  for (int j = 0; j < depth_; ++j) {
    restore("prompt.text_ctx." + std::to_string(j + 1), text_ctx_[j]);
    restore("prompt.vision_ctx." + std::to_string(j + 1), vision_ctx_[j]);
  }
  restore("prompt.text_to_vision.weight", t2v_w_);
  restore("prompt.text_to_vision.bias", t2v_b_);
  restore("prompt.vision_to_text.weight", v2t_w_);
  restore("prompt.vision_to_text.bias", v2t_b_);
  restore("prompt.view_signal", signal_);
}

std::string TextTemplate::normal_text() const { return class_name; }

std::string TextTemplate::abnormal_text() const { return state_word + " " + class_name; }

TextInputs build_text_inputs(const std::vector<std::string>& class_names, const WordTokenizer& tokenizer,
                             const std::string& state_word) {
  if (class_names.empty()) throw InputError("build_text_inputs: empty class list");
  TextInputs out;
  for (const auto& name : class_names) {
    const TextTemplate t{name, state_word};
    auto wrap = [&](const std::string& text) {
      std::vector<int> ids{tokenizer.sot()};
      try {
        const auto words = tokenizer.encode_words(text);
        ids.insert(ids.end(), words.begin(), words.end());
      } catch (const TokenizerError& e) {
        throw TokenizerError("class '" + name + "': " + e.what());
      }
      ids.push_back(tokenizer.eot());
      return ids;
    };
    out.classes.push_back(name);
    out.normal.push_back(wrap(t.normal_text()));
    out.abnormal.push_back(wrap(t.abnormal_text()));
  }
  return out;
}

}  // namespace anople
