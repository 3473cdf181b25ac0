#include "anople/backbone.hpp"

#include "anople/errors.hpp"
#include "anople/tensor_io.hpp"

#include <cmath>
#include <random>
#include <string>

namespace anople {

using ad::Matrix;
using ad::Var;

void BackboneConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("backbone config: " + msg); };
  if (text_width <= 0 || vision_width <= 0 || embed_dim <= 0) fail("widths must be positive");
  if (text_layers <= 0 || vision_layers <= 0) fail("layer counts must be positive");
  if (text_heads <= 0 || text_width % text_heads != 0) fail("text width not divisible by text heads");
  if (vision_heads <= 0 || vision_width % vision_heads != 0) fail("vision width not divisible by vision heads");
  if (patch_size <= 0 || input_resolution <= 0) fail("patch size and resolution must be positive");
  if (input_resolution % patch_size != 0) fail("input resolution must be a multiple of the patch size");
  if (prompt_depth < 1 || prompt_depth > std::min(text_layers, vision_layers)) {
    fail("prompt depth must lie in [1, min(text_layers, vision_layers)]");
  }
  for (double s : std)
    if (!(s > 0)) fail("normalization std must be positive");
}

BackboneConfig BackboneConfig::reference() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::tiny() {
  BackboneConfig c;
  c.text_width = 16;
  c.vision_width = 32;
  c.embed_dim = 16;
  c.text_layers = 4;
  c.vision_layers = 4;
  c.text_heads = 2;
  c.vision_heads = 4;
  c.patch_size = 4;
  c.input_resolution = 32;
  c.context_length = 32;
  c.prompt_depth = 3;
  return c;
}

Matrix patchify(const cv::Mat& image, int patch_size) {
  if (image.type() != CV_32FC3) throw InputError("patchify: expected CV_32FC3 image");
  if (image.rows % patch_size != 0 || image.cols % patch_size != 0) {
    throw InputError("patchify: image size is not a multiple of the patch size");
  }
  const int gh = image.rows / patch_size;
  const int gw = image.cols / patch_size;
  const int pp = patch_size * patch_size;
  Matrix out(static_cast<Eigen::Index>(gh) * gw, 3 * pp);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      const Eigen::Index row = static_cast<Eigen::Index>(gy) * gw + gx;
      for (int ky = 0; ky < patch_size; ++ky) {
        const auto* px = image.ptr<cv::Vec3f>(gy * patch_size + ky) + gx * patch_size;
        for (int kx = 0; kx < patch_size; ++kx)
          for (int c = 0; c < 3; ++c) out(row, c * pp + ky * patch_size + kx) = px[kx][c];
      }
    }
  }
  return out;
}

namespace {

struct LayerNormWeights {
  Var gamma, beta;
};

struct BlockWeights {
  LayerNormWeights ln1, ln2;
  Var in_w, in_b, out_w, out_b;
  Var fc_w, fc_b, proj_w, proj_b;
};

struct TowerWeights {
  std::vector<BlockWeights> blocks;
  int heads = 1;
};

Var layer_norm(const Var& x, const LayerNormWeights& ln) { return ad::layer_norm(x, ln.gamma, ln.beta); }

class ClipBackbone final : public Backbone {
 public:
  ClipBackbone(BackboneConfig cfg, WordTokenizer tok) : cfg_(std::move(cfg)), tokenizer_(std::move(tok)) {}

  const BackboneConfig& config() const override { return cfg_; }
  const WordTokenizer& tokenizer() const override { return tokenizer_; }
  double logit_scale() const override { return std::exp(logit_scale_log_); }

  Var encode_text(std::span<const int> token_ids, std::span<const Var> layer_prompts) const override;
  VisionOutput encode_image(const cv::Mat& image, std::span<const Var> layer_prompts,
                            std::span<const int> tap_layers) const override;
  std::uint64_t weights_checksum() const override;

  void init_random(std::uint64_t seed);
  void load(const TensorFile& file);
  TensorFile export_weights() const;

 private:
  Var run_block(const Var& x, const BlockWeights& b, int heads, bool causal) const;
  void check_prompts(std::span<const Var> layer_prompts, int width, int layers, const char* tower) const;

  BackboneConfig cfg_;
  WordTokenizer tokenizer_;

  // text tower
  Matrix token_embedding_;      // vocab x d_t
  Matrix text_positional_;      // context x d_t
  TowerWeights text_;
  LayerNormWeights ln_final_;
  Var text_projection_;         // d_t x embed

  // vision tower
  Var conv1_;                   // d_v x 3p^2
  Matrix class_embedding_;      // 1 x d_v
  Matrix vision_positional_;    // (1+n) x d_v
  LayerNormWeights ln_pre_, ln_post_;
  TowerWeights vision_;
  Var vision_projection_;       // d_v x embed

  double logit_scale_log_ = std::log(1.0 / 0.07);
};

Var ClipBackbone::run_block(const Var& x, const BlockWeights& b, int heads, bool causal) const {
  Var h = layer_norm(x, b.ln1);
  h = ad::linear(h, b.in_w, b.in_b);
  h = ad::attention(h, heads, causal);
  h = ad::linear(h, b.out_w, b.out_b);
  Var y = ad::add(x, h);
  h = layer_norm(y, b.ln2);
  h = ad::linear(h, b.fc_w, b.fc_b);
  h = cfg_.activation == Activation::gelu ? ad::gelu(h) : ad::quick_gelu(h);
  h = ad::linear(h, b.proj_w, b.proj_b);
  return ad::add(y, h);
}

void ClipBackbone::check_prompts(std::span<const Var> layer_prompts, int width, int layers,
                                 const char* tower) const {
  if (static_cast<int>(layer_prompts.size()) > layers) {
    throw ConfigError(std::string(tower) + " prompts supplied for more layers than the encoder has");
  }
  for (const auto& p : layer_prompts) {
    if (p.cols() != width) {
      throw ConfigError(std::string(tower) + " prompt width " + std::to_string(p.cols()) +
                        " does not match encoder width " + std::to_string(width));
    }
    if (p.rows() != layer_prompts.front().rows()) {
      throw ConfigError(std::string(tower) + " prompt blocks must have the same length at every layer");
    }
  }
}

Var ClipBackbone::encode_text(std::span<const int> token_ids, std::span<const Var> layer_prompts) const {
  check_prompts(layer_prompts, cfg_.text_width, cfg_.text_layers, "text");
  const int slots = layer_prompts.empty() ? 0 : static_cast<int>(layer_prompts.front().rows());
  const int n = static_cast<int>(token_ids.size());
  if (n < 2) throw InputError("encode_text: token sequence needs start and end tokens");
  if (n + slots > cfg_.context_length) throw InputError("encode_text: sequence exceeds context length");

  Matrix tokens(n, cfg_.text_width);
  for (int i = 0; i < n; ++i) {
    const int id = token_ids[i];
    if (id < 0 || id >= token_embedding_.rows()) throw InputError("encode_text: token id out of range");
    const int pos = i == 0 ? 0 : i + slots;
    tokens.row(i) = token_embedding_.row(id) + text_positional_.row(pos);
  }

  Var x;
  if (slots > 0) {
    const Var parts[] = {ad::constant(tokens.topRows(1)), layer_prompts[0], ad::constant(tokens.bottomRows(n - 1))};
    x = ad::concat_rows(parts);
  } else {
    x = ad::constant(tokens);
  }
  for (int l = 0; l < cfg_.text_layers; ++l) {
    if (l > 0 && l < static_cast<int>(layer_prompts.size()) && slots > 0) {
      const Var parts[] = {ad::slice_rows(x, 0, 1), layer_prompts[l], ad::slice_rows(x, 1 + slots, n - 1)};
      x = ad::concat_rows(parts);
    }
    x = run_block(x, text_.blocks[l], text_.heads, true);
  }
  Var eot = ad::slice_rows(x, n - 1 + slots, 1);
  eot = layer_norm(eot, ln_final_);
  return ad::l2_normalize_rows(ad::matmul(eot, text_projection_));
}

VisionOutput ClipBackbone::encode_image(const cv::Mat& image, std::span<const Var> layer_prompts,
                                        std::span<const int> tap_layers) const {
  check_prompts(layer_prompts, cfg_.vision_width, cfg_.vision_layers, "vision");
  if (image.rows != cfg_.input_resolution || image.cols != cfg_.input_resolution) {
    throw InputError("encode_image: image must be " + std::to_string(cfg_.input_resolution) + " px square");
  }
  for (int t : tap_layers)
    if (t < 1 || t > cfg_.vision_layers) throw InputError("encode_image: tap layer out of range");

  const int n = cfg_.num_patches();
  const int slots = layer_prompts.empty() ? 0 : static_cast<int>(layer_prompts.front().rows());

  Matrix tokens(n + 1, cfg_.vision_width);
  tokens.topRows(1) = class_embedding_;
  tokens.bottomRows(n) = patchify(image, cfg_.patch_size) * conv1_.value().transpose();
  tokens += vision_positional_;
  Var x = layer_norm(ad::constant(std::move(tokens)), ln_pre_);

  VisionOutput out;
  int current_slots = 0;
  for (int l = 0; l < cfg_.vision_layers; ++l) {
    if (l < static_cast<int>(layer_prompts.size()) && slots > 0) {
      const Var parts[] = {ad::slice_rows(x, 0, 1), layer_prompts[l], ad::slice_rows(x, 1 + current_slots, n)};
      x = ad::concat_rows(parts);
      current_slots = slots;
    }
    x = run_block(x, vision_.blocks[l], vision_.heads, false);
    for (int t : tap_layers)
      if (t == l + 1) out.taps.push_back(ad::slice_rows(x, 1 + current_slots, n));
  }
  Var cls = layer_norm(ad::slice_rows(x, 0, 1), ln_post_);
  out.cls = ad::l2_normalize_rows(ad::matmul(cls, vision_projection_));
  out.patches = layer_norm(ad::slice_rows(x, 1 + current_slots, n), ln_post_);
  return out;
}

std::uint64_t ClipBackbone::weights_checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  const TensorFile file = export_weights();
  for (const auto& [name, rec] : file.tensors) {
    for (char ch : name) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ull;
    const auto* bytes = reinterpret_cast<const unsigned char*>(rec.data.data());
    const std::size_t len = static_cast<std::size_t>(rec.data.size()) * sizeof(double);
    for (std::size_t i = 0; i < len; ++i) h = (h ^ bytes[i]) * 1099511628211ull;
  }
  return h;
}

void ClipBackbone::init_random(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto normal = [&rng](Eigen::Index r, Eigen::Index c, double std) {
    std::normal_distribution<double> dist(0.0, std);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
  };
  auto ones = [](int d) { return ad::constant(Matrix::Ones(1, d)); };
  auto zeros = [](Eigen::Index r, Eigen::Index c) { return ad::constant(Matrix::Zero(r, c)); };

  auto make_tower = [&](int width, int layers, int heads) {
    TowerWeights t;
    t.heads = heads;
    const double attn_std = 1.0 / std::sqrt(static_cast<double>(width));
    const double proj_std = attn_std / std::sqrt(2.0 * layers);
    const double fc_std = 1.0 / std::sqrt(2.0 * width);
    for (int l = 0; l < layers; ++l) {
      BlockWeights b;
      b.ln1 = {ones(width), zeros(1, width)};
      b.ln2 = {ones(width), zeros(1, width)};
      b.in_w = ad::constant(normal(3 * width, width, attn_std));
      b.in_b = zeros(1, 3 * width);
      b.out_w = ad::constant(normal(width, width, proj_std));
      b.out_b = zeros(1, width);
      b.fc_w = ad::constant(normal(4 * width, width, fc_std));
      b.fc_b = zeros(1, 4 * width);
      b.proj_w = ad::constant(normal(width, 4 * width, proj_std));
      b.proj_b = zeros(1, width);
      t.blocks.push_back(std::move(b));
    }
    return t;
  };

  const int dt = cfg_.text_width;
  const int dv = cfg_.vision_width;
  token_embedding_ = normal(tokenizer_.vocab_size(), dt, 0.5);
  text_positional_ = normal(cfg_.context_length, dt, 0.01);
  text_ = make_tower(dt, cfg_.text_layers, cfg_.text_heads);
  ln_final_ = {ones(dt), zeros(1, dt)};
  text_projection_ = ad::constant(normal(dt, cfg_.embed_dim, 1.0 / std::sqrt(static_cast<double>(dt))));

  const int pp3 = 3 * cfg_.patch_size * cfg_.patch_size;
  conv1_ = ad::constant(normal(dv, pp3, 1.0 / std::sqrt(static_cast<double>(pp3))));
  class_embedding_ = normal(1, dv, 1.0 / std::sqrt(static_cast<double>(dv)));
  vision_positional_ = normal(cfg_.num_patches() + 1, dv, 0.02);
  ln_pre_ = {ones(dv), zeros(1, dv)};
  ln_post_ = {ones(dv), zeros(1, dv)};
  vision_ = make_tower(dv, cfg_.vision_layers, cfg_.vision_heads);
  vision_projection_ = ad::constant(normal(dv, cfg_.embed_dim, 1.0 / std::sqrt(static_cast<double>(dv))));
}

TensorFile ClipBackbone::export_weights() const {
  TensorFile f;
  auto put = [&f](const std::string& name, const Matrix& m) { f.tensors[name] = TensorRecord::from_matrix(m); };
  auto put_vec = [&f](const std::string& name, const Matrix& m) {
    f.tensors[name] = TensorRecord::with_shape(m, {static_cast<std::int64_t>(m.size())});
  };
  auto put_tower = [&](const std::string& prefix, const TowerWeights& t) {
    for (std::size_t l = 0; l < t.blocks.size(); ++l) {
      const auto& b = t.blocks[l];
      const std::string p = prefix + "resblocks." + std::to_string(l) + ".";
      put_vec(p + "ln_1.weight", b.ln1.gamma.value());
      put_vec(p + "ln_1.bias", b.ln1.beta.value());
      put_vec(p + "ln_2.weight", b.ln2.gamma.value());
      put_vec(p + "ln_2.bias", b.ln2.beta.value());
      put(p + "attn.in_proj_weight", b.in_w.value());
      put_vec(p + "attn.in_proj_bias", b.in_b.value());
      put(p + "attn.out_proj.weight", b.out_w.value());
      put_vec(p + "attn.out_proj.bias", b.out_b.value());
      put(p + "mlp.c_fc.weight", b.fc_w.value());
      put_vec(p + "mlp.c_fc.bias", b.fc_b.value());
      put(p + "mlp.c_proj.weight", b.proj_w.value());
      put_vec(p + "mlp.c_proj.bias", b.proj_b.value());
    }
  };
  put("token_embedding.weight", token_embedding_);
  put("positional_embedding", text_positional_);
  put_tower("transformer.", text_);
  put_vec("ln_final.weight", ln_final_.gamma.value());
  put_vec("ln_final.bias", ln_final_.beta.value());
  put("text_projection", text_projection_.value());

  const std::int64_t p = cfg_.patch_size;
  f.tensors["visual.conv1.weight"] = TensorRecord::with_shape(conv1_.value(), {cfg_.vision_width, 3, p, p});
  put_vec("visual.class_embedding", class_embedding_);
  put("visual.positional_embedding", vision_positional_);
  put_vec("visual.ln_pre.weight", ln_pre_.gamma.value());
  put_vec("visual.ln_pre.bias", ln_pre_.beta.value());
  put_tower("visual.transformer.", vision_);
  put_vec("visual.ln_post.weight", ln_post_.gamma.value());
  put_vec("visual.ln_post.bias", ln_post_.beta.value());
  put("visual.proj", vision_projection_.value());
  Matrix ls(1, 1);
  ls(0, 0) = logit_scale_log_;
  f.tensors["logit_scale"] = TensorRecord::with_shape(ls, {});
  return f;
}

int count_blocks(const TensorFile& f, const std::string& prefix) {
  int n = 0;
  while (f.contains(prefix + "resblocks." + std::to_string(n) + ".ln_1.weight")) ++n;
  return n;
}

void ClipBackbone::load(const TensorFile& f) {
  auto row = [](const TensorRecord& r) {
    Matrix m = r.data;
    m.resize(1, r.data.size());
    return m;
  };
  auto vec = [&](const std::string& name) { return ad::constant(row(f.at(name))); };
  auto mat = [&](const std::string& name) { return ad::constant(f.at(name).data); };
  auto load_tower = [&](const std::string& prefix, int layers, int heads) {
    TowerWeights t;
    t.heads = heads;
    for (int l = 0; l < layers; ++l) {
      const std::string p = prefix + "resblocks." + std::to_string(l) + ".";
      BlockWeights b;
      b.ln1 = {vec(p + "ln_1.weight"), vec(p + "ln_1.bias")};
      b.ln2 = {vec(p + "ln_2.weight"), vec(p + "ln_2.bias")};
      b.in_w = mat(p + "attn.in_proj_weight");
      b.in_b = vec(p + "attn.in_proj_bias");
      b.out_w = mat(p + "attn.out_proj.weight");
      b.out_b = vec(p + "attn.out_proj.bias");
      b.fc_w = mat(p + "mlp.c_fc.weight");
      b.fc_b = vec(p + "mlp.c_fc.bias");
      b.proj_w = mat(p + "mlp.c_proj.weight");
      b.proj_b = vec(p + "mlp.c_proj.bias");
      t.blocks.push_back(std::move(b));
    }
    return t;
  };

  token_embedding_ = f.at("token_embedding.weight").data;
  text_positional_ = f.at("positional_embedding").data;
  text_ = load_tower("transformer.", cfg_.text_layers, cfg_.text_heads);
  ln_final_ = {vec("ln_final.weight"), vec("ln_final.bias")};
  text_projection_ = mat("text_projection");

  conv1_ = mat("visual.conv1.weight");
  class_embedding_ = row(f.at("visual.class_embedding"));
  vision_positional_ = f.at("visual.positional_embedding").data;
  ln_pre_ = {vec("visual.ln_pre.weight"), vec("visual.ln_pre.bias")};
  ln_post_ = {vec("visual.ln_post.weight"), vec("visual.ln_post.bias")};
  vision_ = load_tower("visual.transformer.", cfg_.vision_layers, cfg_.vision_heads);
  vision_projection_ = mat("visual.proj");
  logit_scale_log_ = f.contains("logit_scale") ? f.at("logit_scale").data(0, 0) : std::log(100.0);
}

}  // namespace

std::shared_ptr<Backbone> make_tiny_backbone(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  auto b = std::make_shared<ClipBackbone>(config, WordTokenizer::builtin());
  b->init_random(seed);
  return b;
}

std::shared_ptr<Backbone> load_backbone(const std::filesystem::path& weights, const std::filesystem::path& vocab,
                                        const BackboneConfig& overrides) {
  const TensorFile f = read_tensor_file(weights);
  BackboneConfig cfg = overrides;
  const auto& conv = f.at("visual.conv1.weight");
  if (conv.shape.size() != 4 || conv.shape[2] != conv.shape[3]) throw FormatError("visual.conv1.weight must be [w,3,p,p]");
  cfg.vision_width = static_cast<int>(conv.shape[0]);
  cfg.patch_size = static_cast<int>(conv.shape[2]);
  const auto n_pos = f.at("visual.positional_embedding").data.rows() - 1;
  const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_pos))));
  if (grid * grid != n_pos) throw FormatError("visual positional embedding is not a square grid");
  cfg.input_resolution = grid * cfg.patch_size;
  cfg.text_width = static_cast<int>(f.at("token_embedding.weight").data.cols());
  cfg.context_length = static_cast<int>(f.at("positional_embedding").data.rows());
  cfg.embed_dim = static_cast<int>(f.at("visual.proj").data.cols());
  cfg.text_layers = count_blocks(f, "transformer.");
  cfg.vision_layers = count_blocks(f, "visual.transformer.");
  if (overrides.text_heads <= 0 || cfg.text_width % overrides.text_heads != 0) cfg.text_heads = cfg.text_width / 64;
  if (overrides.vision_heads <= 0 || cfg.vision_width % overrides.vision_heads != 0) {
    cfg.vision_heads = cfg.vision_width / 64;
  }
  cfg.validate();
  if (f.at("text_projection").data.cols() != cfg.embed_dim) throw FormatError("text and visual projections disagree");

  auto b = std::make_shared<ClipBackbone>(cfg, WordTokenizer::load(vocab));
  b->load(f);
  return b;
}

void save_backbone(const Backbone& backbone, const std::filesystem::path& path) {
  const auto* clip = dynamic_cast<const ClipBackbone*>(&backbone);
  if (!clip) throw StateError("save_backbone: unsupported backbone implementation");
  write_tensor_file(path, clip->export_weights(), DType::F64);
}

}  // namespace anople
